use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative numerical routine did not converge.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The progressive classification ran out of non-jump observations.
    #[error("degenerate threshold schedule: rank {rank} of {size} (every observation classified as jump)")]
    DegenerateSchedule { rank: usize, size: usize },

    /// Characteristic-function inversion had no usable frequencies.
    #[error("deconvolution impossible: {0}")]
    Deconvolution(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure(msg.into())
    }
}
