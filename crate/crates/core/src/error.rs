use thiserror::Error;

/// Errors raised by the numerical kernels, layers, solvers and tasks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix (pivot {pivot:.3e} below threshold {threshold:.3e})")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("weight matrix is zero")]
    ZeroWeight,

    #[error("dense KKT system of size {size} exceeds the limit of {limit}")]
    DimensionTooLarge { size: usize, limit: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
