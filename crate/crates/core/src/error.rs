use std::io;

use thiserror::Error;

/// Errors produced anywhere in the compression and replay pipeline.
#[derive(Debug, Error)]
pub enum DrrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A pop needed more bytes than the coder holds.
    #[error("bit stream exhausted")]
    ExhaustedStream,

    /// Bits-back decoding of latents ran past the auxiliary bits seeded into the coder.
    #[error("insufficient initial bits for bits-back coding")]
    InsufficientInitialBits,

    #[error("corrupted data: {0}")]
    Corrupted(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DrrError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DrrError::InvalidInput(msg.into()))
}

pub(crate) fn corrupted<T>(msg: impl Into<String>) -> Result<T> {
    Err(DrrError::Corrupted(msg.into()))
}
