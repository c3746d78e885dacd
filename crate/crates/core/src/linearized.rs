//! Linearized minimization of the error norm.
//!
//! Each outer step linearizes `‖A − (Y+dY)ᵀ(Ã+dÃ)(Y+dY)‖_F` in the updates and
//! rotates it by the span `Q` and null space `Q̃` of `P_I Ã Y`. The `Q`-block
//! and mixed blocks are cancelled exactly by a closed-form `dY`; the remaining
//! `Q̃`-block is a small, ill-conditioned least-squares problem in `dÃ` solved
//! through its normal equations with a truncated SVD.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::LocalProblem;
use crate::transform::{
    congruence, initial_guess, residual_and_error, ConvergenceTrace, IterationRecord, TransformPair,
};

/// Orthonormal split of the local space by the row space of `P_I Ã Y`.
#[derive(Debug, Clone)]
pub struct SubspaceSplit {
    /// `n_L × r`, spans the row space.
    pub q: DMatrix<f64>,
    /// `n_L × (n_L − r)`, orthonormal complement.
    pub q_null: DMatrix<f64>,
    /// The `r` retained singular values, descending.
    pub sigma: Vec<f64>,
    /// `n_I × r` left singular vectors paired with `sigma`.
    pub u: DMatrix<f64>,
}

impl SubspaceSplit {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Thin SVD with singular values sorted descending, `U` and `Vᵀ` permuted to match.
fn sorted_svd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite matrix passed to SVD"));
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sigma = order.iter().map(|&k| s[k]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |k, j| v_t[(order[k], j)]);
    Ok((u, sigma, v_t))
}

/// Splits the local space by the row space of `P_I Ã Y`.
///
/// Singular values at or below `rank_tol·σ_max` count as null, so a
/// rank-deficient `Ã` yields fewer than `n_I` spanning vectors.
pub fn split_spaces(
    problem: &LocalProblem,
    pair: &TransformPair,
    rank_tol: f64,
) -> Result<SubspaceSplit> {
    let n_l = problem.n_local();
    let n_i = problem.n_interior();
    let image = pair.interior_image(problem);
    // Zero rows up to a square matrix give a complete right basis.
    let padded = DMatrix::from_fn(n_l, n_l, |i, j| if i < n_i { image[(i, j)] } else { 0.0 });
    let (u, s, v_t) = sorted_svd(padded)?;
    let s_max = s.first().copied().unwrap_or(0.0);
    let r = if s_max > 0.0 {
        s.iter()
            .take(n_i)
            .filter(|&&v| v > rank_tol * s_max)
            .count()
    } else {
        0
    };
    let v = v_t.transpose();
    Ok(SubspaceSplit {
        q: v.columns(0, r).into_owned(),
        q_null: v.columns(r, n_l - r).into_owned(),
        sigma: s[..r].to_vec(),
        u: u.view((0, 0), (n_i, r)).into_owned(),
    })
}

/// Normal equations of `min ‖Q̃ᵀ(R − YᵀdÃY)Q̃‖_F` over pattern-restricted symmetric `dÃ`.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Unknown `k` is the pattern entry `basis_map[k] = (i, j)`, `i <= j`.
    pub basis_map: Vec<(usize, usize)>,
    pub dim: usize,
}

/// Assembles the normal equations from `G = YQ̃Q̃ᵀYᵀ` and
/// `M = YQ̃(Q̃ᵀRQ̃)Q̃ᵀYᵀ`. With symmetric basis matrices `B_k`,
/// `N_kl = Tr(B_k G B_l G)` and `rhs_k = Tr(B_k M)`.
pub fn build_normal_system(
    problem: &LocalProblem,
    pair: &TransformPair,
    split: &SubspaceSplit,
) -> NormalSystem {
    let y = pair.full_y(problem);
    let r = residual_and_error(problem, pair).residual;
    let w = &y * &split.q_null;
    let g = crate::transform::symmetrize(&(&w * w.transpose()));
    let rotated = congruence(&split.q_null, &r);
    let m = crate::transform::symmetrize(&(&w * rotated * w.transpose()));

    let basis_map: Vec<(usize, usize)> = problem.target_pattern.iter().collect();
    let n = basis_map.len();
    let mut matrix = DMatrix::zeros(n, n);
    for (k, &(i, j)) in basis_map.iter().enumerate() {
        for (l, &(p, q)) in basis_map.iter().enumerate().skip(k) {
            let v = match (i == j, p == q) {
                (true, true) => g[(i, p)] * g[(i, p)],
                (true, false) => 2.0 * g[(i, p)] * g[(i, q)],
                (false, true) => 2.0 * g[(p, i)] * g[(p, j)],
                (false, false) => 2.0 * (g[(i, p)] * g[(j, q)] + g[(i, q)] * g[(j, p)]),
            };
            matrix[(k, l)] = v;
            matrix[(l, k)] = v;
        }
    }
    let rhs = DVector::from_iterator(
        n,
        basis_map
            .iter()
            .map(|&(i, j)| if i == j { m[(i, i)] } else { 2.0 * m[(i, j)] }),
    );
    NormalSystem {
        matrix,
        rhs,
        basis_map,
        dim: problem.n_local(),
    }
}

/// How singular values of the normal matrix are split into null and retained.
///
/// Thresholds are stated on the scale of the least-squares operator, whose
/// singular values are the square roots of the normal matrix's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationPolicy {
    /// Drop operator singular values below `tol` relative to the largest,
    /// i.e. normal-matrix values below `tol²·σ_max`.
    Relative(f64),
    /// Cut at the largest consecutive ratio `σ_k / σ_{k+1}` of the normal
    /// spectrum, with values clamped below at `ε·σ_max`. Without a ratio of
    /// at least `min_ratio`, only values at or below the clamp are dropped.
    Gap { min_ratio: f64 },
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::Gap { min_ratio: 1e3 }
    }
}

impl TruncationPolicy {
    /// Number of leading (retained) singular values of a descending normal spectrum.
    pub fn retained(&self, sigma: &[f64]) -> usize {
        let Some(&s_max) = sigma.first() else {
            return 0;
        };
        if s_max <= 0.0 {
            return 0;
        }
        match *self {
            TruncationPolicy::Relative(tol) => {
                sigma.iter().filter(|&&s| s >= tol * tol * s_max).count()
            }
            TruncationPolicy::Gap { min_ratio } => {
                let floor = f64::EPSILON * s_max;
                let above_floor = sigma.iter().filter(|&&s| s > floor).count();
                let mut best = (min_ratio, above_floor);
                for k in 1..sigma.len() {
                    let ratio = sigma[k - 1].max(floor) / sigma[k].max(floor);
                    if ratio >= best.0 {
                        best = (ratio, k);
                    }
                }
                best.1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    /// Singular values of the normal matrix, descending.
    pub sigma: Vec<f64>,
    pub null_dim: usize,
    /// `σ_null_max / σ_retained_min`; zero when nothing was truncated.
    pub gap_ratio: f64,
    /// `σ_max / σ_retained_min` of the normal matrix.
    pub cond_retained: f64,
    /// Square root of `cond_retained`: the condition of the least-squares
    /// operator itself rather than of its normal equations.
    pub cond_eq7: f64,
    /// `‖rhs projected on the truncated subspace‖ / ‖rhs‖`.
    pub rhs_null_fraction: f64,
}

/// SVD of a normal matrix, kept so several truncations can share it.
#[derive(Debug, Clone)]
pub struct NormalFactor {
    u: DMatrix<f64>,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    v_t: DMatrix<f64>,
}

impl NormalFactor {
    pub fn new(system: &NormalSystem) -> Result<Self> {
        if system.basis_map.is_empty() {
            return Err(Error::invalid("target pattern is empty"));
        }
        let (u, sigma, v_t) = sorted_svd(system.matrix.clone())?;
        Ok(Self { u, sigma, v_t })
    }

    /// Number of strictly positive singular values.
    pub fn positive(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }

    /// Pseudo-inverse solution keeping the leading `kept` singular values.
    pub fn solve(&self, system: &NormalSystem, kept: usize) -> (DMatrix<f64>, SolveDiagnostics) {
        let sigma = &self.sigma;
        let kept = kept.min(self.positive());
        let coeffs = self.u.transpose() * &system.rhs;
        let mut x = DVector::zeros(sigma.len());
        for k in 0..kept {
            x += self.v_t.row(k).transpose() * (coeffs[k] / sigma[k]);
        }
        let rhs_norm = system.rhs.norm();
        let null_part = coeffs.rows(kept, sigma.len() - kept).norm();
        let rhs_null_fraction = if rhs_norm > 0.0 {
            null_part / rhs_norm
        } else {
            0.0
        };
        let (cond_retained, gap_ratio) = if kept > 0 {
            let smallest = sigma[kept - 1];
            let gap = sigma.get(kept).map_or(0.0, |&s| s / smallest);
            (sigma[0] / smallest, gap)
        } else {
            (f64::INFINITY, 0.0)
        };

        let mut da = DMatrix::zeros(system.dim, system.dim);
        for (k, &(i, j)) in system.basis_map.iter().enumerate() {
            da[(i, j)] = x[k];
            da[(j, i)] = x[k];
        }
        (
            da,
            SolveDiagnostics {
                sigma: sigma.clone(),
                null_dim: sigma.len() - kept,
                gap_ratio,
                cond_retained,
                cond_eq7: cond_retained.sqrt(),
                rhs_null_fraction,
            },
        )
    }
}

/// Solves the normal equations with a truncated SVD and returns the
/// symmetric, pattern-masked update `dÃ`.
pub fn solve_for_da(
    system: &NormalSystem,
    policy: TruncationPolicy,
) -> Result<(DMatrix<f64>, SolveDiagnostics)> {
    let factor = NormalFactor::new(system)?;
    let kept = policy.retained(&factor.sigma);
    Ok(factor.solve(system, kept))
}

/// `dY = ½ ((P_IÃY)⁺)ᵀ (R − YᵀdÃY)(I + Q̃Q̃ᵀ)`, which cancels the span and
/// mixed blocks of the rotated linearized residual.
pub fn compute_dy(
    problem: &LocalProblem,
    pair: &TransformPair,
    da: &DMatrix<f64>,
    split: &SubspaceSplit,
) -> DMatrix<f64> {
    let n_i = problem.n_interior();
    let n_l = problem.n_local();
    if split.rank() == 0 {
        return DMatrix::zeros(n_i, n_l);
    }
    let y = pair.full_y(problem);
    let reduced = residual_and_error(problem, pair).residual - congruence(&y, da);
    let t = split.q.transpose() * reduced;
    let t = &t + (&t * &split.q_null) * split.q_null.transpose();
    let mut scaled = t;
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row /= 2.0 * split.sigma[k];
    }
    &split.u * scaled
}

/// First-order residual `R − YᵀdÃY − BᵀdY − dYᵀB` with `B = P_IÃY`.
pub fn linearized_residual(
    problem: &LocalProblem,
    pair: &TransformPair,
    dy: &DMatrix<f64>,
    da: &DMatrix<f64>,
) -> DMatrix<f64> {
    let y = pair.full_y(problem);
    let b = pair.interior_image(problem);
    let cross = b.transpose() * dy;
    residual_and_error(problem, pair).residual - congruence(&y, da) - &cross - cross.transpose()
}

/// Full-`Y` embedding of an interior-row update.
fn embed_rows(problem: &LocalProblem, dy: &DMatrix<f64>) -> DMatrix<f64> {
    let n = problem.n_local();
    let mut out = DMatrix::zeros(n, n);
    for (k, &row) in problem.interior.iter().enumerate() {
        out.row_mut(row).copy_from(&dy.row(k));
    }
    out
}

/// `g(α) = ‖A − (Y+αdY)ᵀ(Ã+αdÃ)(Y+αdY)‖²_F` as exact polynomial coefficients
/// `c[0] + c[1]α + … + c[6]α⁶`.
pub fn error_polynomial(
    problem: &LocalProblem,
    pair: &TransformPair,
    dy: &DMatrix<f64>,
    da: &DMatrix<f64>,
) -> [f64; 7] {
    let y = pair.full_y(problem);
    let d = embed_rows(problem, dy);
    let a = &pair.a_tilde;
    let ay = a * &y;
    let ad = a * &d;
    let day = da * &y;
    let dad = da * &d;
    let r0 = residual_and_error(problem, pair).residual;
    // R(α) = R0 − αT1 − α²T2 − α³T3
    let t1 = d.transpose() * &ay + y.transpose() * &ad + y.transpose() * &day;
    let t2 = d.transpose() * &ad + d.transpose() * &day + y.transpose() * &dad;
    let t3 = d.transpose() * &dad;
    let terms = [r0, -t1, -t2, -t3];
    let mut c = [0.0; 7];
    for (i, ri) in terms.iter().enumerate() {
        for (j, rj) in terms.iter().enumerate() {
            c[i + j] += ri.dot(rj);
        }
    }
    c
}

pub fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &v)| k as f64 * v)
        .collect()
}

fn trim(c: &[f64]) -> &[f64] {
    let len = c.iter().rposition(|&v| v != 0.0).map_or(0, |k| k + 1);
    &c[..len]
}

/// Root of `c` on `[lo, hi]` given opposite signs at the ends.
fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = eval_poly(c, lo);
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = eval_poly(c, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Real roots of the polynomial in `[lo, hi]`, ascending. Roots of the
/// derivative split the interval into monotone pieces, each bisected.
pub fn real_roots_in(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let c = trim(c);
    if c.len() <= 1 {
        return Vec::new();
    }
    let mut knots = vec![lo];
    knots.extend(real_roots_in(&derivative(c), lo, hi));
    knots.push(hi);
    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (eval_poly(c, a), eval_poly(c, b));
        let root = if fa == 0.0 {
            Some(a)
        } else if fb == 0.0 {
            Some(b)
        } else if (fa < 0.0) != (fb < 0.0) {
            Some(bisect(c, a, b))
        } else {
            None
        };
        if let Some(r) = root {
            if roots.last().is_none_or(|&last| r > last) {
                roots.push(r);
            }
        }
    }
    roots
}

/// Cauchy bound on the magnitude of every root.
fn root_bound(c: &[f64]) -> f64 {
    let c = trim(c);
    let Some((&lead, rest)) = c.split_last() else {
        return 0.0;
    };
    1.0 + rest.iter().map(|v| (v / lead).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub alpha: f64,
    /// Error norm at the accepted step, evaluated directly.
    pub error: f64,
    pub coefficients: [f64; 7],
}

/// Default upper limit on the step length of the linearized iteration.
pub const DEFAULT_ALPHA_MAX: f64 = 4.0;

/// Exact line search over `α ∈ [0, 4]`.
pub fn line_search(
    problem: &LocalProblem,
    pair: &TransformPair,
    dy: &DMatrix<f64>,
    da: &DMatrix<f64>,
) -> Result<LineSearch> {
    line_search_with_bound(problem, pair, dy, da, DEFAULT_ALPHA_MAX)
}

/// Exact line search over `α ∈ [0, alpha_max]`; `alpha_max` may be infinite.
///
/// Candidates are the real critical points of the degree-6 error polynomial
/// plus a finite `alpha_max`. The step falls back to zero unless the directly
/// evaluated error improves.
pub fn line_search_with_bound(
    problem: &LocalProblem,
    pair: &TransformPair,
    dy: &DMatrix<f64>,
    da: &DMatrix<f64>,
    alpha_max: f64,
) -> Result<LineSearch> {
    let coefficients = error_polynomial(problem, pair, dy, da);
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite line-search polynomial"));
    }
    let current = residual_and_error(problem, pair).norm;
    let fallback = LineSearch {
        alpha: 0.0,
        error: current,
        coefficients,
    };
    let slope = derivative(&coefficients);
    let hi = if alpha_max.is_finite() {
        alpha_max
    } else {
        root_bound(&slope)
    };
    if hi <= 0.0 || hi.is_nan() {
        return Ok(fallback);
    }
    let mut candidates = real_roots_in(&slope, 0.0, hi);
    if alpha_max.is_finite() {
        candidates.push(alpha_max);
    }
    let g0 = coefficients[0];
    let best = candidates
        .into_iter()
        .filter(|&a| a > 0.0)
        .map(|a| (a, eval_poly(&coefficients, a)))
        .filter(|&(_, g)| g < g0)
        .min_by(|x, y| x.1.total_cmp(&y.1));
    let Some((alpha, _)) = best else {
        return Ok(fallback);
    };
    let error = residual_and_error(problem, &pair.stepped(alpha, dy, da)).norm;
    if !error.is_finite() {
        return Err(Error::numerical("non-finite error at line-search step"));
    }
    if error < current {
        Ok(LineSearch {
            alpha,
            error,
            coefficients,
        })
    } else {
        Ok(fallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedOptions {
    pub max_iter: usize,
    /// Converged once the relative error change stays below this for
    /// `patience` consecutive iterations.
    pub rel_change_tol: f64,
    pub patience: usize,
    /// Converged once the error drops below this.
    pub abs_tol: f64,
    pub rank_tol: f64,
    pub policy: TruncationPolicy,
    pub alpha_max: f64,
    /// A step shorter than this is retried with coarser truncations of the
    /// same normal matrix, down to `retry_floor` on the operator scale. The
    /// lowest-error candidate replaces the step if it lowers the error by at
    /// least the fraction `retry_gain`. Zero disables retries.
    pub retry_alpha: f64,
    pub retry_floor: f64,
    pub retry_gain: f64,
}

impl Default for LinearizedOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_change_tol: 1e-10,
            patience: 3,
            abs_tol: 1e-13,
            rank_tol: 1e-12,
            policy: TruncationPolicy::default(),
            alpha_max: DEFAULT_ALPHA_MAX,
            retry_alpha: 0.05,
            retry_floor: 1e-3,
            retry_gain: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub pair: TransformPair,
    pub trace: ConvergenceTrace,
    /// One entry per iteration, matching `trace.records`.
    pub diagnostics: Vec<SolveDiagnostics>,
    pub converged: bool,
}

impl Minimization {
    pub fn error(&self) -> f64 {
        self.trace.final_error()
    }
}

/// One outer step: split, normal equations, `dÃ`, `dY`, line search.
pub fn linearized_step(
    problem: &LocalProblem,
    pair: &TransformPair,
    opts: &LinearizedOptions,
) -> Result<(LineSearch, DMatrix<f64>, DMatrix<f64>, SolveDiagnostics)> {
    let split = split_spaces(problem, pair, opts.rank_tol)?;
    let system = build_normal_system(problem, pair, &split);
    let factor = NormalFactor::new(&system)?;
    let try_kept =
        |kept: usize| -> Result<(LineSearch, DMatrix<f64>, DMatrix<f64>, SolveDiagnostics)> {
            let (da, diag) = factor.solve(&system, kept);
            let dy = compute_dy(problem, pair, &da, &split);
            let search = line_search_with_bound(problem, pair, &dy, &da, opts.alpha_max)?;
            Ok((search, dy, da, diag))
        };
    let kept = opts.policy.retained(&factor.sigma).min(factor.positive());
    let first = try_kept(kept)?;
    if first.0.alpha >= opts.retry_alpha || factor.sigma.is_empty() {
        return Ok(first);
    }
    let current = residual_and_error(problem, pair).norm;
    let mut best = first.clone();
    let s_max = factor.sigma[0];
    let mut last = kept;
    let mut tol = 1e-7;
    while tol <= opts.retry_floor * (1.0 + 1e-9) {
        let cut = factor
            .sigma
            .iter()
            .filter(|&&s| s >= tol * tol * s_max)
            .count();
        if cut < last {
            let candidate = try_kept(cut)?;
            if candidate.0.error < best.0.error {
                best = candidate;
            }
            last = cut;
        }
        tol *= 10.0;
    }
    if best.0.error <= (1.0 - opts.retry_gain) * current {
        Ok(best)
    } else {
        Ok(first)
    }
}

/// Iterates linearized steps from the initial guess until the error stalls.
pub fn linearized_minimize(
    problem: &LocalProblem,
    opts: &LinearizedOptions,
) -> Result<Minimization> {
    linearized_minimize_from(problem, initial_guess(problem), opts)
}

pub fn linearized_minimize_from(
    problem: &LocalProblem,
    start: TransformPair,
    opts: &LinearizedOptions,
) -> Result<Minimization> {
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let mut pair = start;
    let mut error = residual_and_error(problem, &pair).norm;
    let mut trace = ConvergenceTrace::new(error);
    if !error.is_finite() {
        return Err(Error::numerical("non-finite initial error").with_trace(&trace));
    }
    let mut diagnostics = Vec::new();
    let mut converged = error < opts.abs_tol;
    let mut quiet = 0;
    let full_rank = pair_has_full_interior_rank(problem, &pair, opts.rank_tol);
    let mut warned = false;
    for iteration in 1..=opts.max_iter {
        if converged {
            break;
        }
        let (search, dy, da, diag) =
            linearized_step(problem, &pair, opts).map_err(|e| e.with_trace(&trace))?;
        if full_rank && iteration == 1 && diag.null_dim != problem.n_interior() && !warned {
            warn!(
                "normal system null dimension {} differs from n_I = {} (m = {}, lambda = {})",
                diag.null_dim,
                problem.n_interior(),
                problem.hops,
                problem.lambda
            );
            warned = true;
        }
        pair = pair.stepped(search.alpha, &dy, &da);
        trace.records.push(IterationRecord {
            iteration,
            error: search.error,
            alpha: search.alpha,
            cond_eq7: Some(diag.cond_eq7),
            null_dim: Some(diag.null_dim),
            gap_ratio: Some(diag.gap_ratio),
        });
        diagnostics.push(diag);
        let change = (error - search.error).abs() / error;
        error = search.error;
        quiet = if change < opts.rel_change_tol {
            quiet + 1
        } else {
            0
        };
        converged = error < opts.abs_tol || quiet >= opts.patience;
    }
    Ok(Minimization {
        pair,
        trace,
        diagnostics,
        converged,
    })
}

fn pair_has_full_interior_rank(
    problem: &LocalProblem,
    pair: &TransformPair,
    rank_tol: f64,
) -> bool {
    split_spaces(problem, pair, rank_tol).is_ok_and(|s| s.rank() == problem.n_interior())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{extract_local_scalar, SparsityPattern};

    #[test]
    fn split_at_initial_guess_is_decoupled_axis() {
        let lp = extract_local_scalar(1, 0.0).unwrap();
        let split = split_spaces(&lp, &initial_guess(&lp), 1e-12).unwrap();
        assert_eq!(split.rank(), 1);
        assert!((split.q[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((split.sigma[0] - 4.0).abs() < 1e-14);
        assert_eq!(split.q_null.ncols(), 4);
    }

    #[test]
    fn split_of_zero_operator_is_all_null() {
        let lp = extract_local_scalar(1, 4.0).unwrap();
        let split = split_spaces(&lp, &initial_guess(&lp), 1e-12).unwrap();
        assert_eq!(split.rank(), 0);
        assert_eq!(split.q_null.ncols(), 5);
        let dy = compute_dy(&lp, &initial_guess(&lp), &DMatrix::zeros(5, 5), &split);
        assert_eq!(dy, DMatrix::zeros(1, 5));
    }

    #[test]
    fn single_diagonal_pattern_system() {
        let mut lp = extract_local_scalar(1, 0.0).unwrap();
        let mut pattern = SparsityPattern::new(5);
        pattern.insert(2, 2).unwrap();
        lp.target_pattern = pattern;
        let pair = initial_guess(&lp);
        let split = split_spaces(&lp, &pair, 1e-12).unwrap();
        let sys = build_normal_system(&lp, &pair, &split);
        let y = pair.full_y(&lp);
        let w = &y * &split.q_null;
        let g = &w * w.transpose();
        assert_eq!(sys.matrix.shape(), (1, 1));
        assert!((sys.matrix[(0, 0)] - g[(2, 2)].powi(2)).abs() < 1e-14);
        let (da, diag) = solve_for_da(&sys, TruncationPolicy::default()).unwrap();
        assert_eq!(diag.null_dim, 0);
        assert!((da[(2, 2)] - sys.rhs[0] / sys.matrix[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn empty_pattern_rejected() {
        let sys = NormalSystem {
            matrix: DMatrix::zeros(0, 0),
            rhs: DVector::zeros(0),
            basis_map: Vec::new(),
            dim: 3,
        };
        assert!(matches!(
            solve_for_da(&sys, TruncationPolicy::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_rhs_gives_zero_update() {
        let lp = extract_local_scalar(2, 0.0).unwrap();
        let pair = initial_guess(&lp);
        let split = split_spaces(&lp, &pair, 1e-12).unwrap();
        let mut sys = build_normal_system(&lp, &pair, &split);
        sys.rhs.fill(0.0);
        let (da, _) = solve_for_da(&sys, TruncationPolicy::default()).unwrap();
        assert_eq!(da.norm(), 0.0);
    }

    #[test]
    fn zero_direction_line_search_keeps_state() {
        let lp = extract_local_scalar(2, 0.0).unwrap();
        let pair = initial_guess(&lp);
        let dy = DMatrix::zeros(5, 13);
        let da = DMatrix::zeros(13, 13);
        let ls = line_search(&lp, &pair, &dy, &da).unwrap();
        assert_eq!(ls.alpha, 0.0);
        assert_eq!(ls.error, residual_and_error(&lp, &pair).norm);
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (x - 0.5)(x - 1)(x - 3) = x³ - 4.5x² + 5x - 1.5
        let roots = real_roots_in(&[-1.5, 5.0, -4.5, 1.0], 0.0, 4.0);
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([0.5, 1.0, 3.0]) {
            assert!((r - e).abs() < 1e-12, "{r} vs {e}");
        }
        assert!(real_roots_in(&[1.0, 0.0, 1.0], -10.0, 10.0).is_empty());
    }

    #[test]
    fn gap_policy_finds_largest_jump() {
        let gap = TruncationPolicy::default();
        assert_eq!(gap.retained(&[1.0, 0.5, 1e-3, 1e-4, 1e-14, 1e-15]), 4);
        // exact zeros and roundoff-level values sit on the same floor
        assert_eq!(gap.retained(&[1.0, 1e-5, 3e-17, 0.0, 0.0]), 2);
        // no gap of sufficient size: keep everything above the clamp
        assert_eq!(gap.retained(&[1.0, 0.5, 0.1]), 3);
        assert_eq!(gap.retained(&[1.0, 0.5, 0.1, 1e-17, 0.0]), 3);
        assert_eq!(gap.retained(&[2.0]), 1);
    }

    #[test]
    fn relative_policy_uses_operator_scale() {
        let sigma = [1.0, 0.5, 1e-3, 1e-4, 1e-14, 1e-15];
        assert_eq!(TruncationPolicy::Relative(1e-2).retained(&sigma), 4);
        assert_eq!(TruncationPolicy::Relative(1e-6).retained(&sigma), 4);
        assert_eq!(TruncationPolicy::Relative(1e-7).retained(&sigma), 5);
    }
}
