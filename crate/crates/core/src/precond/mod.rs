//! Two-grid preconditioning for the singular no-flux system and the PCG driver.
//!
//! `A` has the constants as its kernel, so every Krylov vector and every
//! preconditioner output is projected onto the zero-mean subspace.

mod error_norm;
mod pcg;
mod smoother;
mod two_grid;

use thiserror::Error;

use crate::linalg::FactorError;

pub use error_norm::{estimate_error_norm, ErrorNormEstimate, ERROR_NORM_MAX_DIM};
pub use pcg::{pcg, SolveReport};
pub use smoother::{build_block_jacobi, BlockJacobiSmoother};
pub use two_grid::{build_two_grid, TwoGridPreconditioner};

/// Anything that approximates `A⁻¹` on the zero-mean subspace.
pub trait Preconditioner: Sync {
    fn dim(&self) -> usize;

    /// Writes `B⁻¹ r` into `out`.
    fn apply(&self, r: &[f64], out: &mut [f64]);
}

/// `B = I`; turns PCG into plain CG.
#[derive(Debug, Clone, Copy)]
pub struct IdentityPreconditioner {
    pub n: usize,
}

impl Preconditioner for IdentityPreconditioner {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        out.copy_from_slice(r);
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecondError {
    #[error("smoother block of coarse element {element} is not positive definite: {source}")]
    SmootherBlock {
        element: usize,
        #[source]
        source: FactorError,
    },
    #[error("operator has {operator} rows but the mesh has {mesh} cells")]
    OperatorMesh { operator: usize, mesh: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(
        "the constant vector is not in the range of the prolongation (relative residual {residual:e}); \
         the two-grid bound requires ker(A) to lie in im(P)"
    )]
    KernelCondition { residual: f64 },
    #[error("coarse operator factorization failed: {source}")]
    CoarseFactor {
        #[source]
        source: FactorError,
    },
    #[error("right-hand side sums to {sum:e}; the no-flux problem needs a zero-sum source")]
    IncompatibleRhs { sum: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("PCG broke down at iteration {iteration} (pᵀAp = {curvature:e})")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error(
        "PCG did not reach the tolerance within {} iterations (final relative residual {:e})",
        .0.iterations,
        .0.final_relative_residual()
    )]
    NonConvergence(Box<SolveReport>),
    #[error("error-norm estimation needs N <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("power iteration did not converge (last Ritz values {previous} and {last})")]
    PowerIteration { previous: f64, last: f64 },
}
