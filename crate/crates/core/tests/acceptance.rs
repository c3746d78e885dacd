//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use coarsen::analysis::{
    fit_decay, global_verify, run_sweep, spectrum_at, SweepOptions, SweepOutcome,
};
use coarsen::lattice::{extract_local_scalar, extract_local_supernode, LocalProblem, StencilSpec};
use coarsen::linearized::{
    build_normal_system, linearized_minimize, split_spaces, LinearizedOptions, TruncationPolicy,
};
use coarsen::transform::{
    initial_guess, objective_gradient, steepest_descent, SteepestDescentOptions,
};
use common::{objective, pack, random_pair, rel_diff, rng};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;
type Check = fn(&Runs) -> Outcome;

/// Sweep results keyed by `(λ·1000, m, p, q)`.
struct Runs(BTreeMap<(i64, usize, usize, usize), SweepOutcome>);

impl Runs {
    fn get(&self, lambda: f64, m: usize, p: usize, q: usize) -> Result<&SweepOutcome, String> {
        self.0
            .get(&((lambda * 1000.0).round() as i64, m, p, q))
            .ok_or_else(|| format!("run lambda={lambda} m={m} ({p}x{q}) failed or missing"))
    }

    fn error(&self, lambda: f64, m: usize) -> Result<f64, String> {
        Ok(self.get(lambda, m, 1, 1)?.error)
    }
}

fn collect_runs() -> Runs {
    let opts = SweepOptions {
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..Default::default()
    };
    let mut runs = BTreeMap::new();
    let lambdas = [0.0, 1.0, 2.0, 3.0, 3.5, 5.0, 6.0, 7.0];
    let scalar = run_sweep(&lambdas, &[1, 2, 3, 4, 5, 6], 1, 1, &opts).unwrap();
    let supernode = run_sweep(&[0.0, 3.5], &[1, 2, 3, 4], 2, 1, &opts).unwrap();
    for rec in scalar.into_iter().chain(supernode) {
        match rec.outcome {
            Ok(o) => {
                runs.insert(
                    ((rec.lambda * 1000.0).round() as i64, rec.m, rec.p, rec.q),
                    o,
                );
            }
            Err(e) => eprintln!("run lambda={} m={} failed: {e}", rec.lambda, rec.m),
        }
    }
    Runs(runs)
}

struct SquaredError<'a>(&'a LocalProblem);

impl CostFunction for SquaredError<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(objective(self.0, x))
    }
}

/// Derivative-free minimum of the error norm by restarted Nelder-Mead.
fn nelder_mead_minimum(problem: &LocalProblem) -> f64 {
    let mut x = pack(problem, &initial_guess(problem));
    let mut best = objective(problem, &x);
    for restart in 0..30 {
        let step = 0.5 * 0.5f64.powi(restart.min(8));
        let mut simplex = vec![x.clone()];
        for k in 0..x.len() {
            let mut v = x.clone();
            v[k] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-18).unwrap();
        let res = Executor::new(SquaredError(problem), solver)
            .configure(|s| s.max_iters(20_000))
            .run()
            .unwrap();
        let cost = res.state().get_best_cost();
        if cost < best {
            x = res.state().get_best_param().unwrap().clone();
            let gained = (best - cost) / best;
            best = cost;
            if gained < 1e-15 {
                break;
            }
        } else {
            break;
        }
    }
    best.sqrt()
}

fn c1_three_methods_agree() -> Outcome {
    let problem = extract_local_scalar(1, 0.0).unwrap();
    let lin = linearized_minimize(&problem, &LinearizedOptions::default())
        .map_err(|e| e.to_string())?
        .error();
    let sd_opts = SteepestDescentOptions {
        max_iter: 20_000,
        tol: 1e-15,
    };
    let sd = steepest_descent(&problem, &sd_opts)
        .map_err(|e| e.to_string())?
        .1
        .final_error();
    let nm = nelder_mead_minimum(&problem);
    let worst = rel_diff(lin, sd)
        .max(rel_diff(lin, nm))
        .max(rel_diff(sd, nm));
    let msg = format!(
        "linearized {lin:.12} steepest {sd:.12} nelder-mead {nm:.12} max rel diff {worst:.2e}"
    );
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2_iteration_counts(runs: &Runs) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for m in 1..=5 {
        let run = runs.get(0.0, m, 1, 1)?;
        ok &= run.converged && run.iterations <= 2 * m + 5;
        parts.push(format!("m={m}:{}", run.iterations));
    }
    let msg = format!("iterations {} (limit 2m+5)", parts.join(" "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3_null_space(_: &Runs) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for m in 2..=6 {
        let problem = extract_local_scalar(m, 0.0).unwrap();
        let report = spectrum_at(
            &problem,
            &initial_guess(&problem),
            TruncationPolicy::default(),
            1e-12,
        )
        .map_err(|e| e.to_string())?;
        let level = report.null_level();
        ok &= report.null_dim == problem.n_interior()
            && level <= 1e-8
            && report.rhs_null_fraction <= 1e-12;
        parts.push(format!(
            "m={m}: null {}/{} level {level:.1e} rhs {:.1e}",
            report.null_dim,
            problem.n_interior(),
            report.rhs_null_fraction
        ));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_error_decay(runs: &Runs) -> Outcome {
    let errors: Vec<f64> = (1..=6)
        .map(|m| runs.error(0.0, m))
        .collect::<Result<_, _>>()?;
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let points: Vec<(usize, f64)> = (2..=6).zip(errors[1..].iter().copied()).collect();
    let fit = fit_decay(&points, false).map_err(|e| e.to_string())?;
    let msg = format!(
        "strictly decreasing {decreasing}, slope {:.3}, R^2 {:.4}",
        fit.slope, fit.r_squared
    );
    if decreasing && fit.slope < 0.0 && fit.r_squared >= 0.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_checkerboard(runs: &Runs) -> Outcome {
    let mut worst: f64 = 0.0;
    for lambda in [1.0, 2.0, 3.0] {
        for m in 1..=6 {
            let d = rel_diff(runs.error(lambda, m)?, runs.error(8.0 - lambda, m)?);
            worst = worst.max(d);
        }
    }
    let msg = format!("max rel diff over lambda 1,2,3 and m=1..6: {worst:.2e}");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_rates(runs: &Runs) -> Outcome {
    let mut rates = Vec::new();
    for lambda in [2.0, 3.0, 3.5] {
        let points: Vec<(usize, f64)> = (2..=6)
            .map(|m| runs.error(lambda, m).map(|e| (m, e)))
            .collect::<Result<_, _>>()?;
        let fit = fit_decay(&points, lambda == 3.5).map_err(|e| e.to_string())?;
        rates.push(fit.rate());
    }
    let msg = format!(
        "rates lambda=2: {:.4}, 3: {:.4}, 3.5: {:.4}",
        rates[0], rates[1], rates[2]
    );
    if rates[0] > rates[1] && rates[1] > rates[2] {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_error_times_condition(runs: &Runs) -> Outcome {
    let mut products = Vec::new();
    for lambda in [0.0, 1.0, 2.0, 3.0, 3.5] {
        let run = runs.get(lambda, 4, 1, 1)?;
        products.push(run.error * run.cond_eq7_estimate);
    }
    let max = products.iter().copied().fold(f64::MIN, f64::max);
    let min = products.iter().copied().fold(f64::MAX, f64::min);
    let msg = format!(
        "products {:?}, spread {:.2}",
        products
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>(),
        max / min
    );
    if max / min < 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_condition_of_y(runs: &Runs) -> Outcome {
    let (worst, key) =
        runs.0
            .iter()
            .map(|(k, o)| (o.cond_y, *k))
            .fold(
                (0.0, (0, 0, 0, 0)),
                |acc, v| if v.0 > acc.0 { v } else { acc },
            );
    let msg = format!(
        "max over {} runs {worst:.3} at lambda={} m={} ({}x{})",
        runs.0.len(),
        key.0 as f64 / 1000.0,
        key.1,
        key.2,
        key.3
    );
    if worst < 12.0 && runs.0.len() == 56 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_supernodes(runs: &Runs) -> Outcome {
    // Supernode m=4 has n_L = 82, closest to the scalar m=6 region (n_L = 85).
    let sn_35 = runs.get(3.5, 4, 2, 1)?.error;
    let sc_35 = runs.error(3.5, 6)?;
    let sn_0 = runs.get(0.0, 4, 2, 1)?.error;
    let sc_0 = runs.error(0.0, 6)?;
    let ratio = sn_0.max(sc_0) / sn_0.min(sc_0);
    let msg = format!(
        "lambda=3.5: 2x1 {sn_35:.4e} vs scalar {sc_35:.4e}; lambda=0: 2x1 {sn_0:.4e} vs scalar {sc_0:.4e} (ratio {ratio:.2})"
    );
    if sn_35 < sc_35 && ratio <= 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c10_global(_: &Runs) -> Outcome {
    let spec_size = 11;
    let mut parts = Vec::new();
    let mut ok = true;
    for lambda in [0.0, 3.5] {
        for m in [2, 4] {
            let problem = extract_local_scalar(m, lambda).unwrap();
            let res = linearized_minimize(&problem, &LinearizedOptions::default())
                .map_err(|e| e.to_string())?;
            let spec = StencilSpec::new(lambda, spec_size, spec_size).unwrap();
            let r = global_verify(&spec, (5, 5), &problem, &res.pair).map_err(|e| e.to_string())?;
            let gap = (r.global_error - r.local_error).abs() / r.local_error;
            ok &= gap <= 1e-12
                && r.max_decoupled_offdiag <= r.local_error
                && r.coupling_deviation <= 1e-13
                && r.external_deviation <= 1e-13;
            parts.push(format!(
                "l={lambda} m={m}: |g-l|/l {gap:.1e} offdiag {:.1e}<={:.1e} coupling {:.1e} external {:.1e}",
                r.max_decoupled_offdiag, r.local_error, r.coupling_deviation, r.external_deviation
            ));
        }
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_problems() -> Vec<LocalProblem> {
    let mut out = Vec::new();
    for lambda in [0.0, 3.5] {
        for m in 1..=3 {
            out.push(extract_local_scalar(m, lambda).unwrap());
        }
        out.push(extract_local_supernode(1, 2, 1, lambda).unwrap());
    }
    out
}

fn c11_gradient(_: &Runs) -> Outcome {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut states = 0;
    let mut rng = rng(2024);
    for problem in gradient_problems() {
        for _ in 0..20 {
            let pair = random_pair(&problem, &mut rng, 0.2);
            let g = objective_gradient(&problem, &pair);
            let analytic = pack(
                &problem,
                &coarsen::transform::TransformPair {
                    y_rows: g.y.clone(),
                    a_tilde: g.a.clone(),
                },
            );
            let x = pack(&problem, &pair);
            for k in 0..x.len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (objective(&problem, &plus) - objective(&problem, &minus)) / (2.0 * h);
                worst = worst.max((fd - analytic[k]).abs() / analytic[k].abs().max(1.0));
            }
            states += 1;
        }
    }
    let msg = format!("{states} states, max scaled deviation {worst:.2e}");
    if worst <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c12_normal_system(_: &Runs) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = rng(7);
    let mut cases = Vec::new();
    for lambda in [0.0, 3.5] {
        cases.push(extract_local_scalar(1, lambda).unwrap());
        cases.push(extract_local_scalar(2, lambda).unwrap());
        cases.push(extract_local_supernode(1, 2, 1, lambda).unwrap());
    }
    for problem in &cases {
        let states = [
            initial_guess(problem),
            random_pair(problem, &mut rng, 0.2),
            random_pair(problem, &mut rng, 0.5),
        ];
        for pair in &states {
            let split = split_spaces(problem, pair, 1e-12).map_err(|e| e.to_string())?;
            let system = build_normal_system(problem, pair, &split);
            let n = problem.n_local();
            let w = pair.full_y(problem) * &split.q_null;
            let r = coarsen::transform::residual_and_error(problem, pair).residual;
            let target = split.q_null.transpose() * r * &split.q_null;
            let columns: Vec<DVector<f64>> = problem
                .target_pattern
                .iter()
                .map(|(i, j)| {
                    let mut b = DMatrix::zeros(n, n);
                    b[(i, j)] = 1.0;
                    b[(j, i)] = 1.0;
                    DVector::from_column_slice((w.transpose() * b * &w).as_slice())
                })
                .collect();
            let c = DMatrix::from_columns(&columns);
            let matrix = c.transpose() * &c;
            let rhs = c.transpose() * DVector::from_column_slice(target.as_slice());
            worst = worst.max((&system.matrix - &matrix).norm() / matrix.norm());
            if rhs.norm() > 0.0 {
                worst = worst.max((&system.rhs - &rhs).norm() / rhs.norm());
            } else {
                worst = worst.max(system.rhs.norm());
            }
        }
    }
    let msg = format!("{} states, max rel deviation {worst:.2e}", cases.len() * 3);
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = collect_runs();
    eprintln!("sweep finished in {:.1?}", start.elapsed());
    let criteria: [(&str, Check); 12] = [
        ("1 steepest/linearized/derivative-free agree at m=1", |_| {
            c1_three_methods_agree()
        }),
        ("2 iterations within 2m+5 for lambda=0", c2_iteration_counts),
        ("3 null space equals interior count", c3_null_space),
        ("4 exponential error decay at lambda=0", c4_error_decay),
        (
            "5 checkerboard symmetry lambda <-> 8-lambda",
            c5_checkerboard,
        ),
        ("6 decay rate ordering in lambda", c6_rates),
        (
            "7 error times conditioning within 10x",
            c7_error_times_condition,
        ),
        ("8 row-normalized Y condition below 12", c8_condition_of_y),
        (
            "9 2x1 supernodes vs scalar at comparable size",
            c9_supernodes,
        ),
        (
            "10 global embedding matches local transformation",
            c10_global,
        ),
        ("11 gradient matches central differences", c11_gradient),
        (
            "12 structured normal system matches brute force",
            c12_normal_system,
        ),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check(&runs) {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        12 - failed,
        start.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
