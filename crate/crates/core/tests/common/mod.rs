#![allow(dead_code)]

use coarsen::lattice::LocalProblem;
use coarsen::transform::{initial_guess, residual_and_error, TransformPair};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Initial guess with uniform noise of size `scale` on every free variable.
pub fn random_pair(problem: &LocalProblem, rng: &mut ChaCha8Rng, scale: f64) -> TransformPair {
    let mut pair = initial_guess(problem);
    for v in pair.y_rows.iter_mut() {
        *v += scale * rng.random_range(-1.0..1.0);
    }
    for (i, j) in problem.target_pattern.iter() {
        let v = pair.a_tilde[(i, j)] + scale * rng.random_range(-1.0..1.0);
        pair.a_tilde[(i, j)] = v;
        pair.a_tilde[(j, i)] = v;
    }
    pair
}

/// Free variables in a flat vector: `Y` interior rows row-major, then the
/// pattern entries of `Ã` in pattern order.
pub fn pack(problem: &LocalProblem, pair: &TransformPair) -> Vec<f64> {
    let mut x: Vec<f64> = pair.y_rows.transpose().iter().copied().collect();
    x.extend(
        problem
            .target_pattern
            .iter()
            .map(|(i, j)| pair.a_tilde[(i, j)]),
    );
    x
}

pub fn unpack(problem: &LocalProblem, x: &[f64]) -> TransformPair {
    let n_i = problem.n_interior();
    let n_l = problem.n_local();
    let y_rows = DMatrix::from_row_slice(n_i, n_l, &x[..n_i * n_l]);
    let mut a_tilde = DMatrix::zeros(n_l, n_l);
    for (k, (i, j)) in problem.target_pattern.iter().enumerate() {
        a_tilde[(i, j)] = x[n_i * n_l + k];
        a_tilde[(j, i)] = x[n_i * n_l + k];
    }
    TransformPair { y_rows, a_tilde }
}

pub fn objective(problem: &LocalProblem, x: &[f64]) -> f64 {
    residual_and_error(problem, &unpack(problem, x))
        .norm
        .powi(2)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
