//! Local sparsity-preserving transformations for algebraic coarsening.
//!
//! A single transformation decouples one node of a sparse symmetric matrix
//! `A` by finding `Y` (the inverse of the local transformation `X`) and a
//! pattern-restricted `Ã` that minimize `‖A − YᵀÃY‖_F` on a local region,
//! leaving the rest of the matrix untouched. The test problem throughout is
//! the five-point Helmholtz stencil with diagonal `λ − 4`.
//!
//! - [`lattice`]: stencil matrices, sparsity patterns, supernodes, local problems.
//! - [`transform`]: the unknowns, error norm, gradient and steepest descent.
//! - [`linearized`]: the linearized minimizer built on a null/span rotation.
//! - [`analysis`]: spectra, spatial decay, sweeps and global verification.

pub mod analysis;
pub mod error;
pub mod lattice;
pub mod linearized;
pub mod transform;

pub use error::{Error, Result};
