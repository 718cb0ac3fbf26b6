use std::io;

use thiserror::Error;

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ForgeError {
    /// Input failed a precondition (bad counts, out-of-range fractions, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoints being combined do not share names, shapes or metadata.
    #[error("checkpoint structure mismatch: {}", .names.join(", "))]
    StructureMismatch { names: Vec<String> },

    #[error("corpus '{source_name}' exhausted after {drawn} of {budget} tokens")]
    Exhausted {
        source_name: String,
        drawn: u64,
        budget: u64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ForgeError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        ForgeError::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        ForgeError::Shape(msg.into())
    }

    /// I/O-class errors map to a different CLI exit status than validation errors.
    pub fn is_io(&self) -> bool {
        matches!(self, ForgeError::Io(_))
    }
}
