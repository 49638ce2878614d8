//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the fusion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two images or cubes that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A header or manifest file is malformed or inconsistent with its data blob.
    #[error("malformed header: {0}")]
    Header(String),

    /// An iterative computation produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
