//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Incompatible tensor/operand shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Unknown name or invalid value in a configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// An operation produced NaN or Inf.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// A stored artifact failed its checksum or structural validation.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Malformed file contents (WVT1, PNG, manifest).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
