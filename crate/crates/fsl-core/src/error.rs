//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    /// A schedule, task, or config failed its structural invariants.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Step index outside the schedule horizon.
    #[error("step {step} out of range 1..={horizon}")]
    StepOutOfRange { step: usize, horizon: usize },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Requested combination of options is not supported.
    #[error("unsupported combination: {0}")]
    Unsupported(String),

    /// A guard refused the computation before it started.
    #[error("resource guard: {0}")]
    Resource(String),

    /// An iteration failed to converge or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed CSV input.
    #[error("csv: {0}")]
    Csv(String),

    /// Malformed JSON input.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
