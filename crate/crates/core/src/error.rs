use thiserror::Error;

/// Errors produced by the tuning engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value lies outside the domain of its parameter or function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Mismatched lengths, dimensions or member sets.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid argument supplied by the caller.
    #[error("argument error: {0}")]
    Argument(String),
    /// Non-finite or otherwise unusable data.
    #[error("data error: {0}")]
    Data(String),
    /// Operation not valid in the current state.
    #[error("state error: {0}")]
    State(String),
    /// A document does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// Numerical failure (e.g. a kernel matrix that stays singular).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
