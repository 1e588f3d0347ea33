//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by attack, model, metric and defense operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a precondition (shape mismatch, non-finite value, bad range).
    #[error("validation error: {0}")]
    Validation(String),

    /// Gradient turned non-finite during an attack; carries the step index.
    #[error("non-finite gradient at attack step {step}")]
    NonFiniteGradient { step: usize },

    /// Checkpoint could not be read, parsed, or is structurally broken.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Checkpoint carries a format version this build does not understand.
    #[error("incompatible checkpoint format version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Underlying image encode/decode failure.
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
