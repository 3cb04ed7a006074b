use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CkmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("malformed metadata at line {line}: {message}")]
    Metadata { line: usize, message: String },

    #[error("no coverage: {0}")]
    NoCoverage(String),

    #[error("numerical fault in `{name}`: {message}")]
    Numerical { name: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CkmError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CkmError::InvalidArgument(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        CkmError::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CkmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CkmError::InvalidArgument(_) => 1,
            CkmError::Numerical { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = CkmError> = std::result::Result<T, E>;
