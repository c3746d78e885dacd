use coarsen::analysis::{
    global_verify, run_sweep, spatial_decay, spectrum_at, SweepOptions, SweepRecord,
};
use coarsen::lattice::{extract_local_supernode, StencilSpec};
use coarsen::linearized::{linearized_minimize, LinearizedOptions, Minimization, TruncationPolicy};
use coarsen::transform::{
    initial_guess, steepest_descent, ConvergenceTrace, SteepestDescentOptions,
};
use coarsen::Error;
use rayon::prelude::*;

use crate::config::{Command, RunConfig};
use crate::output::{Cell, Plot, Series, Table};

/// One CSV file, its plot, and anything that went wrong while producing it.
pub struct Report {
    pub stem: &'static str,
    pub table: Table,
    pub plot: Plot,
    /// Runs that failed numerically; their rows are partial or absent.
    pub failures: Vec<String>,
    /// Checks that completed but did not hold.
    pub violations: Vec<String>,
}

impl Report {
    fn new(stem: &'static str, header: &'static [&'static str], plot: Plot) -> Self {
        Self {
            stem,
            table: Table::new(header),
            plot,
            failures: Vec::new(),
            violations: Vec::new(),
        }
    }
}

fn plot(title: &str, x_label: &str, y_label: &str) -> Plot {
    Plot {
        title: title.to_string(),
        x_label: x_label.to_string(),
        y_label: y_label.to_string(),
        series: Vec::new(),
    }
}

/// Maps `f` over `items` on at most `jobs` threads, keeping input order.
fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, String>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| format!("cannot start worker pool: {e}"))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

fn linearized_options(cfg: &RunConfig) -> LinearizedOptions {
    LinearizedOptions {
        max_iter: cfg.max_iter,
        rel_change_tol: cfg.tol,
        ..Default::default()
    }
}

/// Splits a failed run into its message and whatever trace it left behind.
fn failure(label: String, err: Error) -> (String, Option<ConvergenceTrace>) {
    match err {
        Error::NumericalFailure { message, trace } => (format!("{label}: {message}"), trace),
        other => (format!("{label}: {other}"), None),
    }
}

fn minimize(cfg: &RunConfig, lambda: f64, m: usize) -> Result<Minimization, Error> {
    let problem = extract_local_supernode(m, cfg.p, cfg.q, lambda)?;
    linearized_minimize(&problem, &linearized_options(cfg))
}

pub fn run(cfg: &RunConfig) -> Result<Report, String> {
    match cfg.command {
        Command::SdConvergence => sd_convergence(cfg),
        Command::SvdSpectrum => svd_spectrum(cfg),
        Command::LinConvergence => lin_convergence(cfg),
        Command::SpatialDecay => spatial_decay_cmd(cfg),
        Command::LambdaSweep => lambda_sweep(cfg),
        Command::GlobalVerify => global_verify_cmd(cfg),
    }
}

fn sd_convergence(cfg: &RunConfig) -> Result<Report, String> {
    let lambda = cfg.lambdas[0];
    let opts = SteepestDescentOptions {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
    };
    let results = par_map(cfg.jobs, &cfg.ms, |&m| {
        let problem = extract_local_supernode(m, cfg.p, cfg.q, lambda)?;
        steepest_descent(&problem, &opts).map(|(_, trace)| trace)
    })?;
    let mut report = Report::new(
        "sd_convergence",
        &["m", "iteration", "error"],
        plot("Steepest descent", "iteration", "error norm"),
    );
    for (&m, result) in cfg.ms.iter().zip(results) {
        let trace = match result {
            Ok(trace) => Some(trace),
            Err(e) => {
                let (msg, trace) = failure(format!("m={m}"), e);
                report.failures.push(msg);
                trace
            }
        };
        let Some(trace) = trace else { continue };
        let mut series = Series {
            name: format!("m={m}"),
            points: Vec::new(),
        };
        for r in &trace.records {
            report
                .table
                .push(vec![m.into(), r.iteration.into(), r.error.into()]);
            series.points.push((r.iteration as f64, r.error));
        }
        report.plot.series.push(series);
    }
    Ok(report)
}

fn svd_spectrum(cfg: &RunConfig) -> Result<Report, String> {
    let lambda = cfg.lambdas[0];
    let results = par_map(cfg.jobs, &cfg.ms, |&m| {
        let problem = extract_local_supernode(m, cfg.p, cfg.q, lambda)?;
        spectrum_at(
            &problem,
            &initial_guess(&problem),
            TruncationPolicy::default(),
            LinearizedOptions::default().rank_tol,
        )
    })?;
    let mut report = Report::new(
        "svd_spectrum",
        &["m", "index", "sigma_normalized"],
        plot(
            "Normal-system spectrum",
            "index",
            "normalized singular value",
        ),
    );
    for (&m, result) in cfg.ms.iter().zip(results) {
        match result {
            Ok(spectrum) => {
                let sigma = spectrum.operator_sigma_normalized();
                let mut series = Series {
                    name: format!("m={m}"),
                    points: Vec::new(),
                };
                for (k, &s) in sigma.iter().enumerate() {
                    report.table.push(vec![m.into(), (k + 1).into(), s.into()]);
                    series.points.push(((k + 1) as f64, s));
                }
                report.plot.series.push(series);
            }
            Err(e) => report.failures.push(failure(format!("m={m}"), e).0),
        }
    }
    Ok(report)
}

fn lin_convergence(cfg: &RunConfig) -> Result<Report, String> {
    let lambda = cfg.lambdas[0];
    let results = par_map(cfg.jobs, &cfg.ms, |&m| minimize(cfg, lambda, m))?;
    let mut report = Report::new(
        "lin_convergence",
        &["m", "iteration", "error", "alpha", "cond_eq7_estimate"],
        plot("Linearized iteration", "iteration", "error norm"),
    );
    for (&m, result) in cfg.ms.iter().zip(results) {
        let trace = match result {
            Ok(res) => Some(res.trace),
            Err(e) => {
                let (msg, trace) = failure(format!("m={m}"), e);
                report.failures.push(msg);
                trace
            }
        };
        let Some(trace) = trace else { continue };
        let mut series = Series {
            name: format!("m={m}"),
            points: Vec::new(),
        };
        for r in &trace.records {
            report.table.push(vec![
                m.into(),
                r.iteration.into(),
                r.error.into(),
                r.alpha.into(),
                r.cond_eq7.into(),
            ]);
            series.points.push((r.iteration as f64, r.error));
        }
        report.plot.series.push(series);
    }
    Ok(report)
}

fn spatial_decay_cmd(cfg: &RunConfig) -> Result<Report, String> {
    let lambda = cfg.lambdas[0];
    let mut ms = cfg.ms.clone();
    ms.sort_unstable();
    ms.dedup();
    let largest = *ms.last().expect("validated non-empty");
    let results = par_map(cfg.jobs, &ms, |&m| minimize(cfg, lambda, m))?;
    let mut report = Report::new(
        "spatial_decay",
        &["kind", "distance_or_m", "value"],
        plot("Spatial decay", "m or distance", "value"),
    );
    let mut errors = Series {
        name: "error_vs_m".into(),
        points: Vec::new(),
    };
    let mut columns = Series {
        name: format!("column_norm m={largest}"),
        points: Vec::new(),
    };
    let mut largest_run = None;
    for (&m, result) in ms.iter().zip(results) {
        match result {
            Ok(res) => {
                report.table.push(vec![
                    "error_vs_m".into(),
                    (m as f64).into(),
                    res.error().into(),
                ]);
                errors.points.push((m as f64, res.error()));
                if m == largest {
                    largest_run = Some(res);
                }
            }
            Err(e) => report.failures.push(failure(format!("m={m}"), e).0),
        }
    }
    if let Some(res) = largest_run {
        let problem =
            extract_local_supernode(largest, cfg.p, cfg.q, lambda).map_err(|e| e.to_string())?;
        match spatial_decay(&problem, &res.pair) {
            Ok(mut records) => {
                records.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.node.cmp(&b.node)));
                for r in records {
                    report.table.push(vec![
                        "column_norm".into(),
                        r.distance.into(),
                        r.y_deviation.into(),
                    ]);
                    columns.points.push((r.distance, r.y_deviation));
                }
            }
            Err(e) => report.failures.push(failure(format!("m={largest}"), e).0),
        }
    }
    report.plot.series.push(errors);
    report.plot.series.push(columns);
    Ok(report)
}

const SWEEP_HEADER: &[&str] = &[
    "lambda",
    "m",
    "p",
    "q",
    "n_local",
    "n_a_tilde",
    "error",
    "iterations",
    "converged",
    "cond_y",
    "cond_eq7_estimate",
    "null_dim",
    "mirror_check",
    "status",
];

/// Whether the run at `8 - λ` reached the same error within `1e-8` relative.
fn mirror_check(records: &[SweepRecord], rec: &SweepRecord) -> Cell {
    let mirror = 8.0 - rec.lambda;
    if mirror == rec.lambda {
        return Cell::Empty;
    }
    let other = records
        .iter()
        .find(|r| r.m == rec.m && (r.lambda - mirror).abs() <= 1e-12);
    match (rec.error(), other.and_then(SweepRecord::error)) {
        (Some(a), Some(b)) => {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            if rel <= 1e-8 { "equal" } else { "differ" }.into()
        }
        _ => Cell::Empty,
    }
}

fn lambda_sweep(cfg: &RunConfig) -> Result<Report, String> {
    let opts = SweepOptions {
        linearized: linearized_options(cfg),
        jobs: cfg.jobs,
    };
    let records =
        run_sweep(&cfg.lambdas, &cfg.ms, cfg.p, cfg.q, &opts).map_err(|e| e.to_string())?;
    let mut report = Report::new(
        "lambda_sweep",
        SWEEP_HEADER,
        plot("Converged error versus lambda", "lambda", "error norm"),
    );
    let mut ms: Vec<usize> = records.iter().map(|r| r.m).collect();
    ms.sort_unstable();
    ms.dedup();
    let mut series: Vec<Series> = ms
        .iter()
        .map(|m| Series {
            name: format!("m={m}"),
            points: Vec::new(),
        })
        .collect();
    for rec in &records {
        let mut row: Vec<Cell> = vec![
            rec.lambda.into(),
            rec.m.into(),
            rec.p.into(),
            rec.q.into(),
            rec.n_local.into(),
            rec.n_a_tilde.into(),
        ];
        match &rec.outcome {
            Ok(o) => {
                row.extend([
                    o.error.into(),
                    o.iterations.into(),
                    if o.converged { "true" } else { "false" }.into(),
                    o.cond_y.into(),
                    o.cond_eq7_estimate.into(),
                    o.null_dim.into(),
                    mirror_check(&records, rec),
                    "ok".into(),
                ]);
                let k = ms.binary_search(&rec.m).expect("m collected above");
                series[k].points.push((rec.lambda, o.error));
            }
            Err(msg) => {
                report
                    .failures
                    .push(format!("lambda={} m={}: {msg}", rec.lambda, rec.m));
                row.extend(std::iter::repeat_n(Cell::Empty, 7));
                row.push("failed".into());
            }
        }
        report.table.push(row);
    }
    report.plot.series = series;
    Ok(report)
}

fn global_verify_cmd(cfg: &RunConfig) -> Result<Report, String> {
    let points: Vec<(f64, usize)> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.ms.iter().map(move |&m| (l, m)))
        .collect();
    let results = par_map(cfg.jobs, &points, |&(lambda, m)| {
        let res = minimize(cfg, lambda, m)?;
        let problem = extract_local_supernode(m, cfg.p, cfg.q, lambda)?;
        let width = cfg.p * (2 * m + 1) + 2;
        let height = cfg.q * (2 * m + 1) + 2;
        let spec = StencilSpec::new(lambda, width, height)?;
        global_verify(&spec, (cfg.p * m + 1, cfg.q * m + 1), &problem, &res.pair)
    })?;
    let mut report = Report::new(
        "global_verify",
        &[
            "m",
            "lambda",
            "local_error",
            "global_error",
            "max_decoupled_offdiag",
        ],
        plot("Global embedding", "m", "error norm"),
    );
    let mut local = Vec::new();
    let mut global = Vec::new();
    for (&(lambda, m), result) in points.iter().zip(results) {
        let label = format!("lambda={lambda} m={m}");
        match result {
            Ok(r) => {
                report.table.push(vec![
                    m.into(),
                    lambda.into(),
                    r.local_error.into(),
                    r.global_error.into(),
                    r.max_decoupled_offdiag.into(),
                ]);
                local.push((lambda, m as f64, r.local_error));
                global.push((lambda, m as f64, r.global_error));
                let gap = (r.global_error - r.local_error).abs();
                if gap > 1e-12 * r.local_error.max(f64::MIN_POSITIVE) {
                    report
                        .violations
                        .push(format!("{label}: global and local error differ by {gap:e}"));
                }
                if r.max_decoupled_offdiag > r.local_error {
                    report.violations.push(format!(
                        "{label}: decoupled off-diagonal exceeds local error"
                    ));
                }
                if r.coupling_deviation > 1e-13 || r.external_deviation > 1e-13 {
                    report.violations.push(format!(
                        "{label}: transformation leaks outside the local block"
                    ));
                }
            }
            Err(e) => report.failures.push(failure(label, e).0),
        }
    }
    for &lambda in &cfg.lambdas {
        for (name, data) in [("local", &local), ("global", &global)] {
            report.plot.series.push(Series {
                name: format!("{name} lambda={lambda}"),
                points: data
                    .iter()
                    .filter(|p| p.0 == lambda)
                    .map(|p| (p.1, p.2))
                    .collect(),
            });
        }
    }
    Ok(report)
}
