//! Seeded dense linear algebra: Gaussian sampling, products, and extremal
//! singular values.

mod matrix;
mod rng;
mod svd;

pub use matrix::{axpy, dot, gaussian_matrix, norm, Matrix};
pub use rng::{Generator, RngState};
pub use svd::{
    extremal_singular_values, singular_values, spectral_norm, symmetric_eigenvalues,
    MAX_JACOBI_SWEEPS, MAX_POWER_ITERATIONS, RAYLEIGH_TOLERANCE,
};
