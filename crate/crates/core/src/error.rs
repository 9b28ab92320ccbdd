use thiserror::Error;

/// Errors produced by the tomography toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("size guard violated: {0}")]
    SizeGuard(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation unsupported for POVM `{povm}`: {reason}")]
    Unsupported { povm: String, reason: String },

    #[error("input is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),

    #[error("iterative eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("negative conditional probability {value:e} at site {site}")]
    NegativeProbability { site: usize, value: f64 },

    #[error("degenerate model: sampled string has probability {0:e}")]
    DegenerateModel(f64),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
