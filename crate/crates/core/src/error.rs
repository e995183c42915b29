use thiserror::Error;

/// Errors raised by library operations.
///
/// Validation findings about a scenario are not errors; they are returned as
/// data by [`crate::scenario::validate`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },
    #[error("interval [{a}, {b}] is not contained in a single monotone interval")]
    Straddle { a: f64, b: f64 },
    #[error("numerical procedure failed: {0}")]
    Numerical(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
