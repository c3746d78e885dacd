//! Measurements on computed transformations: normal-system spectra, spatial
//! decay of the deviation from identity, parameter sweeps, decay-rate fits
//! and verification of a local transformation embedded in a global grid.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{build_helmholtz, extract_local_supernode, LocalProblem, StencilSpec};
use crate::linearized::{
    build_normal_system, linearized_minimize, solve_for_da, split_spaces, LinearizedOptions,
    TruncationPolicy,
};
use crate::transform::{condition_of_y, row_normalize, TransformPair};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Singular values of the normal matrix, descending.
    pub sigma: Vec<f64>,
    pub null_dim: usize,
    pub gap_ratio: f64,
    pub cond_retained: f64,
    pub cond_eq7_estimate: f64,
    pub rhs_null_fraction: f64,
}

impl SpectrumReport {
    pub fn retained(&self) -> usize {
        self.sigma.len() - self.null_dim
    }

    /// Singular values of the least-squares operator relative to the largest,
    /// `sqrt(σ_k / σ_1)` of the normal spectrum.
    pub fn operator_sigma_normalized(&self) -> Vec<f64> {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma
            .iter()
            .map(|&s| if top > 0.0 { (s / top).sqrt() } else { 0.0 })
            .collect()
    }

    /// Largest truncated operator singular value relative to the largest one.
    pub fn null_level(&self) -> f64 {
        self.operator_sigma_normalized()
            .get(self.retained())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Normal-system spectrum at the given state.
pub fn spectrum_at(
    problem: &LocalProblem,
    pair: &TransformPair,
    policy: TruncationPolicy,
    rank_tol: f64,
) -> Result<SpectrumReport> {
    let split = split_spaces(problem, pair, rank_tol)?;
    let system = build_normal_system(problem, pair, &split);
    let (_, diag) = solve_for_da(&system, policy)?;
    Ok(SpectrumReport {
        null_dim: diag.null_dim,
        gap_ratio: diag.gap_ratio,
        cond_retained: diag.cond_retained,
        cond_eq7_estimate: diag.cond_eq7,
        rhs_null_fraction: diag.rhs_null_fraction,
        sigma: diag.sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRecord {
    pub node: usize,
    /// Euclidean grid distance from the decoupled node.
    pub distance: f64,
    /// `‖column of row-normalized Y − identity column‖₂`.
    pub y_deviation: f64,
    /// `‖column of Ã − column of A_LL‖₂`, in the same gauge.
    pub a_deviation: f64,
}

/// Per-node deviation of `(Y, Ã)` from `(I, A)`, after fixing the gauge by
/// row normalization.
pub fn spatial_decay(problem: &LocalProblem, pair: &TransformPair) -> Result<Vec<DecayRecord>> {
    let normalized = row_normalize(problem, pair)?;
    let y = normalized.full_y(problem);
    let n = problem.n_local();
    let y_dev = y - DMatrix::<f64>::identity(n, n);
    let a_dev = &normalized.a_tilde - &problem.a_ll;
    Ok((0..n)
        .map(|k| {
            let (dx, dy) = problem.coords[k];
            DecayRecord {
                node: k,
                distance: ((dx * dx + dy * dy) as f64).sqrt(),
                y_deviation: y_dev.column(k).norm(),
                a_deviation: a_dev.column(k).norm(),
            }
        })
        .collect())
}

/// Embedding check of a local transformation in a global grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalReport {
    /// `‖X_Lᵀ A_LL X_L − Ã_LL‖_F` computed on the local block alone.
    pub local_error: f64,
    /// `‖A_LL − YᵀÃY‖_F`, the minimized norm.
    pub local_residual: f64,
    /// `‖XᵀAX − Ã_global‖_F` over the whole grid.
    pub global_error: f64,
    /// Largest off-diagonal magnitude in the decoupled row of `XᵀAX`.
    pub max_decoupled_offdiag: f64,
    /// Largest deviation of the local/external coupling block from `A_LE`.
    pub coupling_deviation: f64,
    /// Largest deviation of the external block from `A_EE`.
    pub external_deviation: f64,
}

/// `X_L = Y⁻¹` built blockwise so its boundary rows are exact identity rows.
pub fn local_x(problem: &LocalProblem, pair: &TransformPair) -> Result<DMatrix<f64>> {
    let n = problem.n_local();
    let interior = &problem.interior;
    let boundary = &problem.boundary;
    let y = pair.full_y(problem);
    let y_ii = y.select_rows(interior).select_columns(interior);
    let y_ib = y.select_rows(interior).select_columns(boundary);
    let x_ii = y_ii
        .try_inverse()
        .ok_or_else(|| Error::numerical("interior block of Y is singular"))?;
    if x_ii.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("interior block of Y is singular"));
    }
    let x_ib = -(&x_ii * y_ib);
    let mut x = DMatrix::identity(n, n);
    for (a, &i) in interior.iter().enumerate() {
        for (b, &j) in interior.iter().enumerate() {
            x[(i, j)] = x_ii[(a, b)];
        }
        for (b, &j) in boundary.iter().enumerate() {
            x[(i, j)] = x_ib[(a, b)];
        }
    }
    Ok(x)
}

/// Global grid indices of the local nodes with the decoupled node at `center`.
pub fn embedding(
    spec: &StencilSpec,
    center: (usize, usize),
    problem: &LocalProblem,
) -> Result<Vec<usize>> {
    problem
        .coords
        .iter()
        .map(|&(dx, dy)| {
            let x = center.0 as i64 + dx;
            let y = center.1 as i64 + dy;
            if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
                Err(Error::invalid(format!(
                    "local region does not fit a {}x{} grid centred at {:?}",
                    spec.width, spec.height, center
                )))
            } else {
                Ok(spec.index(x as usize, y as usize))
            }
        })
        .collect()
}

/// Dense global matrices `(A, X, Ã_global)` for a local transformation.
pub fn global_matrices(
    spec: &StencilSpec,
    center: (usize, usize),
    problem: &LocalProblem,
    pair: &TransformPair,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let map = embedding(spec, center, problem)?;
    let a = build_helmholtz(spec)?.to_dense();
    let local = a.select_rows(&map).select_columns(&map);
    if local != problem.a_ll {
        return Err(Error::invalid(
            "local problem does not match the global stencil at this position",
        ));
    }
    let x_l = local_x(problem, pair)?;
    let n = spec.node_count();
    let mut x = DMatrix::identity(n, n);
    let mut a_tilde = a.clone();
    for (i, &gi) in map.iter().enumerate() {
        for (j, &gj) in map.iter().enumerate() {
            x[(gi, gj)] = x_l[(i, j)];
            a_tilde[(gi, gj)] = pair.a_tilde[(i, j)];
        }
    }
    Ok((a, x, a_tilde))
}

/// Embeds `X = Y⁻¹` in the global identity and checks that `XᵀAX` differs
/// from `A` with its local block replaced by `Ã` only on the local block.
pub fn global_verify(
    spec: &StencilSpec,
    center: (usize, usize),
    problem: &LocalProblem,
    pair: &TransformPair,
) -> Result<GlobalReport> {
    let map = embedding(spec, center, problem)?;
    let (a, x, a_tilde) = global_matrices(spec, center, problem, pair)?;
    let transformed = x.transpose() * &a * &x;
    let global_error = (&transformed - &a_tilde).norm();

    let x_l = local_x(problem, pair)?;
    let local_error = (x_l.transpose() * &problem.a_ll * &x_l - &pair.a_tilde).norm();
    let local_residual = crate::transform::residual_and_error(problem, pair).norm;

    let n = spec.node_count();
    let mut in_local = vec![false; n];
    for &g in &map {
        in_local[g] = true;
    }
    let c = map[problem.decoupled];
    let max_decoupled_offdiag = (0..n)
        .filter(|&j| j != c)
        .map(|j| transformed[(c, j)].abs().max(transformed[(j, c)].abs()))
        .fold(0.0, f64::max);
    let mut coupling_deviation: f64 = 0.0;
    let mut external_deviation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = (transformed[(i, j)] - a[(i, j)]).abs();
            match (in_local[i], in_local[j]) {
                (true, true) => {}
                (false, false) => external_deviation = external_deviation.max(d),
                _ => coupling_deviation = coupling_deviation.max(d),
            }
        }
    }
    Ok(GlobalReport {
        local_error,
        local_residual,
        global_error,
        max_decoupled_offdiag,
        coupling_deviation,
        external_deviation,
    })
}

/// `‖A⁻¹ − X Ã_global⁻¹ Xᵀ‖_F`, computed densely.
pub fn inverse_error(
    spec: &StencilSpec,
    center: (usize, usize),
    problem: &LocalProblem,
    pair: &TransformPair,
) -> Result<f64> {
    let (a, x, a_tilde) = global_matrices(spec, center, problem, pair)?;
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::numerical("global matrix is singular"))?;
    let at_inv = a_tilde
        .try_inverse()
        .ok_or_else(|| Error::numerical("transformed matrix is singular"))?;
    Ok((a_inv - &x * at_inv * x.transpose()).norm())
}

/// Converged quantities of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOutcome {
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cond_y: f64,
    pub cond_eq7_estimate: f64,
    pub null_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub lambda: f64,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub n_local: usize,
    pub n_a_tilde: usize,
    /// `Err` carries the failure message of a point that did not complete.
    pub outcome: std::result::Result<SweepOutcome, String>,
}

impl SweepRecord {
    pub fn error(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub linearized: LinearizedOptions,
    /// Maximum number of points solved concurrently.
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            linearized: LinearizedOptions::default(),
            jobs: 1,
        }
    }
}

fn sweep_point(lambda: f64, m: usize, p: usize, q: usize, opts: &LinearizedOptions) -> SweepRecord {
    let problem = match extract_local_supernode(m, p, q, lambda) {
        Ok(problem) => problem,
        Err(e) => {
            return SweepRecord {
                lambda,
                m,
                p,
                q,
                n_local: 0,
                n_a_tilde: 0,
                outcome: Err(e.to_string()),
            }
        }
    };
    let outcome = linearized_minimize(&problem, opts).and_then(|res| {
        let cond_y = condition_of_y(&problem, &res.pair)?;
        let last = res.diagnostics.last();
        Ok(SweepOutcome {
            error: res.error(),
            iterations: res.trace.len(),
            converged: res.converged,
            cond_y,
            cond_eq7_estimate: last.map_or(f64::NAN, |d| d.cond_eq7),
            null_dim: last.map_or(0, |d| d.null_dim),
        })
    });
    SweepRecord {
        lambda,
        m,
        p,
        q,
        n_local: problem.n_local(),
        n_a_tilde: problem.n_a_tilde(),
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

/// Runs the linearized minimizer at every `(λ, m)` point for `p × q`
/// supernodes. Records are sorted by `λ` then `m` whatever the completion order.
pub fn run_sweep(
    lambdas: &[f64],
    ms: &[usize],
    p: usize,
    q: usize,
    opts: &SweepOptions,
) -> Result<Vec<SweepRecord>> {
    if lambdas.is_empty() || ms.is_empty() {
        return Err(Error::invalid("sweep needs at least one lambda and one m"));
    }
    if opts.jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    let mut points: Vec<(f64, usize)> = lambdas
        .iter()
        .flat_map(|&l| ms.iter().map(move |&m| (l, m)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    points.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let lin = opts.linearized;
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|&(lambda, m)| sweep_point(lambda, m, p, q, &lin))
            .collect()
    }))
}

/// Least-squares line `log(error) ≈ intercept + slope·m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl DecayFit {
    /// Exponential decay rate per hop, `−slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }
}

/// Fits `log(error)` against `m`. With `drop_stagnated`, a point whose error
/// improves on the previous `m` by less than 10% is left out.
pub fn fit_decay(points: &[(usize, f64)], drop_stagnated: bool) -> Result<DecayFit> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    let kept: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .filter(|&(k, &(_, e))| {
            !drop_stagnated || k == 0 || (sorted[k - 1].1 - e) / sorted[k - 1].1 >= 0.1
        })
        .map(|(_, &(m, e))| (m as f64, e.ln()))
        .collect();
    if kept.len() < 2 || kept.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::invalid("decay fit needs two positive errors"));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("decay fit needs two distinct m values"));
    }
    let slope = sxy / sxx;
    let ss_res: f64 = kept
        .iter()
        .map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DecayFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: kept.len(),
    })
}
