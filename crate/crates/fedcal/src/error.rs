//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes passed to a linear-algebra or model operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input values outside the operation's domain (e.g. label out of range).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// Caller misuse that is not a shape problem (empty data, bad argument).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed on-disk format (bad magic, count mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
