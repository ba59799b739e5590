//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum CoconError {
    /// A caller violated an API contract (shape mismatch, misaligned ids, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input vector had (near-)zero norm where a direction was required.
    #[error("normalization error: {0}")]
    Normalization(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    /// A referenced file, view, or record does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// Configuration rejected by validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoconError>;

impl CoconError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CoconError::Contract(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        CoconError::Parameter(msg.into())
    }
}
