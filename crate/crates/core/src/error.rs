//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter coordinate left the valid region (sigma <= 0, weight outside (0,1), NaN, ...).
    #[error("degenerate parameter at coordinate {index}: {value} ({reason})")]
    DegenerateParameter {
        index: usize,
        value: f64,
        reason: String,
    },

    /// A mixture component lost all posterior mass, so the M-step is undefined for it.
    #[error("component {component} collapsed: effective count {count:.3e} below threshold")]
    ComponentCollapse { component: usize, count: f64 },

    /// Cholesky factorization hit a non-positive pivot; the matrix is not positive definite.
    #[error("matrix not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// Jacobi eigenvalue sweeps did not reduce the off-diagonal norm below tolerance.
    #[error(
        "Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:.3e})"
    )]
    JacobiNoConvergence { sweeps: usize, off: f64 },

    /// A finite-difference probe could not find a valid perturbation even after shrinking.
    #[error("finite-difference step at coordinate {index} invalid after {attempts} halvings")]
    FdStepInvalid { index: usize, attempts: usize },

    /// Not enough trajectory points for the requested window or estimate.
    #[error("insufficient data: need {needed}, have {available} ({what})")]
    InsufficientData {
        what: String,
        needed: usize,
        available: usize,
    },

    /// Mismatched or invalid dimensions passed to an operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
