use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },

    #[error("expected {expected} values for the grid, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at pixel ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation not supported for {0}")]
    UnsupportedRegularizer(&'static str),

    #[error("solver diverged at iteration {iter} (energy {energy})")]
    Diverged { iter: usize, energy: f64 },

    #[error("no convergence after {iter} iterations (last energy {energy}, delta {delta})")]
    NotConverged { iter: usize, energy: f64, delta: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
