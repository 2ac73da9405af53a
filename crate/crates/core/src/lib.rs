//! Gated linear unit (GaLU) networks as an exactly solvable random-feature
//! system.
//!
//! A GaLU neuron `g(x) = 1[uᵀx ≥ 0] · xᵀw` decouples the gate vector `u`
//! (fixed at initialization, gradient identically zero) from the linear
//! weights `w`. Training the weights of a one-hidden-layer GaLU network is
//! ordinary linear least squares against the block feature matrix built from
//! the gated copies of the data, which makes the whole system solvable in
//! closed form and lets every spectral and kernel quantity that drives the
//! training dynamics be computed or estimated exactly.
//!
//! Module map:
//! - [`network`]: GaLU/ReLU network objects and forward evaluation.
//! - [`features`]: the random feature embedding and the block feature matrix.
//! - [`spectral`]: minimum singular values, the data-diversity constant
//!   `λ(X)`, Khatri-Rao lower bound, matrix-Chernoff width predictions.
//! - [`kernel`]: the arc-cosine kernel, its Gram matrix, RKHS norms, and the
//!   finite-width vs infinite-width concentration machinery.
//! - [`solver`]: minimum-norm least squares, the rank/loss law, and the
//!   under-parametrized prediction.
//! - [`train`]: gradient descent on the convex reparameterization, SGD/Adam
//!   on the natural parameterization, gradient-equality and gate-perturbation
//!   diagnostics.
//! - [`data`]: seeded synthetic generators for all experiments.
//! - [`checks`]: the pass/fail property suites behind the check commands.

pub mod checks;
pub mod data;
pub mod features;
pub mod kernel;
pub mod linalg;
pub mod network;
pub mod solver;
pub mod spectral;
pub mod train;

use thiserror::Error;

/// Relative eigenvalue tolerance: eigenvalues (or squared singular values)
/// below `EIG_REL_TOL` times the largest one are treated as zero everywhere a
/// numerical rank or a pseudo-inverse is formed.
pub const EIG_REL_TOL: f64 = 1e-10;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum GaluError {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("allocation of {required} bytes exceeds the memory budget of {budget} bytes")]
    CapacityExceeded { required: u64, budget: u64 },
    #[error(
        "gram matrix is numerically singular: min eigenvalue {min_eig:.6e} \
         below tolerance {tol:.6e}"
    )]
    SingularGram { min_eig: f64, tol: f64 },
    #[error("data not diverse: lambda(X) = {lambda:.6e} is not positive at working precision")]
    DataNotDiverse { lambda: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, GaluError>;

/// Derives the RNG seed for an indexed task (Monte Carlo trial, parameter
/// point, perturbation draw) from a root seed.
///
/// This is a splitmix64 finalizer over `root + index · φ64`, so per-task
/// streams are fixed by `(root, index)` alone and results do not depend on
/// the order in which tasks run.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
