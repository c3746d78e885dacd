//! Transformation unknowns `(Y, Ã)`, the error norm `‖A − YᵀÃY‖_F`, its
//! gradient and the steepest-descent baseline.
//!
//! `Y` shares the local form of `X = Y⁻¹`: boundary rows are identity rows and
//! only the interior rows are free, so a pair stores just those rows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::LocalProblem;
use crate::linearized::{line_search_with_bound, LineSearch};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformPair {
    /// Interior rows of `Y`, in the order of `LocalProblem::interior`.
    pub y_rows: DMatrix<f64>,
    /// Symmetric, zero outside the target pattern.
    pub a_tilde: DMatrix<f64>,
}

impl TransformPair {
    /// Full `n_L × n_L` matrix `Y` with identity boundary rows.
    pub fn full_y(&self, problem: &LocalProblem) -> DMatrix<f64> {
        let n = problem.n_local();
        let mut y = DMatrix::identity(n, n);
        for (k, &row) in problem.interior.iter().enumerate() {
            y.row_mut(row).copy_from(&self.y_rows.row(k));
        }
        y
    }

    /// `P_I Ã Y`, the interior rows of `ÃY`.
    pub fn interior_image(&self, problem: &LocalProblem) -> DMatrix<f64> {
        let ay = &self.a_tilde * self.full_y(problem);
        DMatrix::from_fn(problem.n_interior(), problem.n_local(), |k, j| {
            ay[(problem.interior[k], j)]
        })
    }

    /// `self + alpha·(dy, da)`.
    pub fn stepped(&self, alpha: f64, dy: &DMatrix<f64>, da: &DMatrix<f64>) -> TransformPair {
        TransformPair {
            y_rows: &self.y_rows + dy * alpha,
            a_tilde: &self.a_tilde + da * alpha,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.y_rows
            .iter()
            .chain(self.a_tilde.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// `R = A_LL − YᵀÃY`, exactly symmetric.
    pub residual: DMatrix<f64>,
    pub norm: f64,
}

/// One iteration of a minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub error: f64,
    pub alpha: f64,
    /// Condition estimate of the restricted least-squares problem for `dÃ`.
    pub cond_eq7: Option<f64>,
    pub null_dim: Option<usize>,
    pub gap_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    /// Error of the starting point.
    pub initial_error: f64,
    pub records: Vec<IterationRecord>,
}

impl ConvergenceTrace {
    pub fn new(initial_error: f64) -> Self {
        Self {
            initial_error,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(self.initial_error, |r| r.error)
    }

    /// Errors including the starting point.
    pub fn errors(&self) -> Vec<f64> {
        std::iter::once(self.initial_error)
            .chain(self.records.iter().map(|r| r.error))
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.errors().windows(2).all(|w| w[1] <= w[0])
    }
}

/// `Y = I` and `Ã` equal to `A_LL` on the target pattern.
pub fn initial_guess(problem: &LocalProblem) -> TransformPair {
    let n = problem.n_local();
    let y_rows = DMatrix::from_fn(problem.n_interior(), n, |k, j| {
        if problem.interior[k] == j {
            1.0
        } else {
            0.0
        }
    });
    TransformPair {
        y_rows,
        a_tilde: problem.target_pattern.mask(&problem.a_ll),
    }
}

/// Symmetric part taken entrywise as `(m_ij + m_ji) / 2`, which is exactly
/// symmetric in floating point.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `YᵀMY`, symmetrized.
pub(crate) fn congruence(y: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(y.transpose() * (m * y)))
}

pub fn residual_and_error(problem: &LocalProblem, pair: &TransformPair) -> ErrorReport {
    let y = pair.full_y(problem);
    let residual = &problem.a_ll - congruence(&y, &pair.a_tilde);
    let norm = residual.norm();
    ErrorReport { residual, norm }
}

/// Gradient of `‖A − YᵀÃY‖²_F` with respect to the free variables.
#[derive(Debug, Clone)]
pub struct Gradient {
    /// `n_I × n_L`, matching `TransformPair::y_rows`.
    pub y: DMatrix<f64>,
    /// Symmetric and pattern-masked. An off-diagonal entry is the derivative
    /// with respect to the single variable shared by `(i, j)` and `(j, i)`.
    pub a: DMatrix<f64>,
}

impl Gradient {
    pub fn norm_squared(&self, problem: &LocalProblem) -> f64 {
        let a: f64 = problem
            .target_pattern
            .iter()
            .map(|(i, j)| self.a[(i, j)].powi(2))
            .sum();
        self.y.norm_squared() + a
    }
}

pub fn objective_gradient(problem: &LocalProblem, pair: &TransformPair) -> Gradient {
    let y = pair.full_y(problem);
    let r = residual_and_error(problem, pair).residual;
    let ayr = &pair.a_tilde * &y * &r;
    let gy = DMatrix::from_fn(problem.n_interior(), problem.n_local(), |k, j| {
        -4.0 * ayr[(problem.interior[k], j)]
    });
    let yryt = &y * &r * y.transpose();
    let n = problem.n_local();
    let mut ga = DMatrix::zeros(n, n);
    for (i, j) in problem.target_pattern.iter() {
        if i == j {
            ga[(i, i)] = -2.0 * yryt[(i, i)];
        } else {
            let g = -2.0 * (yryt[(i, j)] + yryt[(j, i)]);
            ga[(i, j)] = g;
            ga[(j, i)] = g;
        }
    }
    Gradient { y: gy, a: ga }
}

#[derive(Debug, Clone, Copy)]
pub struct SteepestDescentOptions {
    pub max_iter: usize,
    /// Stop once `|e_k − e_{k+1}| / e_k` falls below this.
    pub tol: f64,
}

impl Default for SteepestDescentOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-12,
        }
    }
}

/// Minimizes the error norm along the negative gradient with an exact
/// polynomial line search at every step.
pub fn steepest_descent(
    problem: &LocalProblem,
    opts: &SteepestDescentOptions,
) -> Result<(TransformPair, ConvergenceTrace)> {
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let mut pair = initial_guess(problem);
    let mut error = residual_and_error(problem, &pair).norm;
    let mut trace = ConvergenceTrace::new(error);
    if !error.is_finite() {
        return Err(Error::numerical("non-finite initial error").with_trace(&trace));
    }
    for iteration in 1..=opts.max_iter {
        let grad = objective_gradient(problem, &pair);
        if grad.norm_squared(problem) == 0.0 {
            break;
        }
        let dy = -grad.y;
        let da = -grad.a;
        let LineSearch {
            alpha,
            error: new_error,
            ..
        } = line_search_with_bound(problem, &pair, &dy, &da, f64::INFINITY)
            .map_err(|e| e.with_trace(&trace))?;
        pair = pair.stepped(alpha, &dy, &da);
        if !pair.is_finite() || !new_error.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite state at steepest-descent iteration {iteration}"
            ))
            .with_trace(&trace));
        }
        trace.records.push(IterationRecord {
            iteration,
            error: new_error,
            alpha,
            cond_eq7: None,
            null_dim: None,
            gap_ratio: None,
        });
        let change = (error - new_error).abs() / error.max(f64::MIN_POSITIVE);
        error = new_error;
        if change < opts.tol {
            break;
        }
    }
    Ok((pair, trace))
}

/// Applies the gauge transformation `(Y, Ã) → (D⁻¹Y, DÃD)` where `D` is the
/// identity extended by `scale` on the interior nodes.
pub fn interior_scaling(
    problem: &LocalProblem,
    pair: &TransformPair,
    scale: &[f64],
) -> Result<TransformPair> {
    if scale.len() != problem.n_interior() {
        return Err(Error::invalid(format!(
            "expected {} interior scale factors, got {}",
            problem.n_interior(),
            scale.len()
        )));
    }
    if let Some(k) = scale.iter().position(|&d| d == 0.0 || !d.is_finite()) {
        return Err(Error::invalid(format!(
            "scale factor {k} must be finite and nonzero"
        )));
    }
    let mut d = vec![1.0; problem.n_local()];
    for (k, &row) in problem.interior.iter().enumerate() {
        d[row] = scale[k];
    }
    let mut y_rows = pair.y_rows.clone();
    for (k, mut row) in y_rows.row_iter_mut().enumerate() {
        row /= scale[k];
    }
    let a = &pair.a_tilde;
    let a_tilde = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| d[i] * a[(i, j)] * d[j]);
    Ok(TransformPair { y_rows, a_tilde })
}

/// Fixes the gauge by scaling every interior row of `Y` to unit 2-norm.
pub fn row_normalize(problem: &LocalProblem, pair: &TransformPair) -> Result<TransformPair> {
    let norms: Vec<f64> = pair.y_rows.row_iter().map(|r| r.norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::numerical("zero interior row in Y"));
    }
    interior_scaling(problem, pair, &norms)
}

/// 2-norm condition number of the row-normalized full `Y`.
pub fn condition_of_y(problem: &LocalProblem, pair: &TransformPair) -> Result<f64> {
    let normalized = row_normalize(problem, pair)?;
    let sigma = normalized.full_y(problem).singular_values();
    let max = sigma.max();
    let min = sigma.min();
    if min <= 0.0 || min.is_nan() || !max.is_finite() {
        return Err(Error::numerical("Y is singular"));
    }
    Ok(max / min)
}
