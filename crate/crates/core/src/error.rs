//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrideError {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A share exchange violated the protocol (missing, duplicate or
    /// misdirected share).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Malformed input data, located as precisely as possible.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PrideError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PrideError {
    PrideError::InvalidArgument(msg.into())
}
