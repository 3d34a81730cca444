//! Shared error type.
//!
//! Everything fallible in this crate returns [`Error`]. Variants split into
//! two broad families: *validation* failures (bad inputs: wrong dimensions,
//! asymmetric matrices, inadmissible parameters) and *numerical* failures
//! (iterations that did not converge). The CLI maps the families onto
//! distinct exit codes, so keep new variants in the right family.

use crate::spd::SpdMatrix;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by geometry, kernel, solver, and learning routines.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A matrix or set element had a different dimension than expected.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Input failed the entrywise symmetry check.
    #[error("matrix is not symmetric: max deviation {max_dev:.3e} exceeds tolerance")]
    NotSymmetric { max_dev: f64 },

    /// Cholesky factorization failed; the matrix has a non-positive eigenvalue.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// Kernel width outside the region where the kernel stays positive definite.
    #[error(
        "sigma = {sigma} is not admissible for dimension {dim}: \
         valid widths are half-integers 1/2, 1, ..., ({dim}-1)/2 or any value above ({dim}-1)/2"
    )]
    SigmaNotAdmissible { sigma: f64, dim: usize },

    /// A scalar or structural argument failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Label referenced a class that does not exist in the dictionary.
    #[error("unknown class id {0}")]
    UnknownClass(usize),

    /// Fixed-point iteration for the intrinsic mean ran out of iterations.
    /// Carries the last iterate so callers may accept a best-effort mean.
    #[error("intrinsic mean did not converge in {iterations} iterations (gradient norm {residual:.3e})")]
    MeanDidNotConverge {
        iterations: usize,
        residual: f64,
        last: Box<SpdMatrix>,
    },

    /// Coordinate descent ran out of sweeps. Carries the last iterate.
    #[error("coordinate descent did not converge in {sweeps} sweeps (last change {last_change:.3e}, KKT residual {kkt:.3e})")]
    SolverDidNotConverge {
        sweeps: usize,
        last_change: f64,
        kkt: f64,
        last: Vec<f64>,
    },

    /// Failure while processing one element of a batch.
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for the iteration-did-not-converge family, false for input validation.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::MeanDidNotConverge { .. } | Error::SolverDidNotConverge { .. } => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
