use std::io;
use std::path::{Path, PathBuf};

use forge_core::ForgeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    /// A record in an input stream could not be parsed or failed validation.
    #[error("{}:{line}: {msg}", .path.display())]
    Record {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Core(#[from] ForgeError),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Io { path, source }
    }

    pub fn record(path: impl AsRef<Path>, line: usize, msg: impl ToString) -> CliError {
        CliError::Record {
            path: path.as_ref().to_path_buf(),
            line,
            msg: msg.to_string(),
        }
    }

    /// 2 for I/O failures, 1 for everything the user can fix in their input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
