use std::path::PathBuf;

use thiserror::Error;

use crate::estimate::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value failed validation; `field` is a dotted path.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Malformed input data. `line` is 1-based.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: usize, to: usize },

    /// Maximum-likelihood estimation failed to converge or diverged.
    #[error("estimation failed after {} iterations: {message}", trace.len())]
    Estimation {
        message: String,
        trace: Vec<IterationRecord>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for bad input, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Validation { .. } | Error::Parse { .. } => 2,
            Error::Json(e) if !e.is_io() => 2,
            Error::Csv(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
            _ => 3,
        }
    }
}
