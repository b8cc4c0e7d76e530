use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("model format error: {0}")]
    Format(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("encoder `{encoder}`: {message}")]
    Encoder { encoder: String, message: String },

    #[error("endpoint unreachable for ids [{}]: {message}", ids.join(", "))]
    Batch { ids: Vec<String>, message: String },

    #[error("campaign paused: {0}")]
    CampaignPaused(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
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

    /// Process exit status for this error class: 2 for I/O and endpoint
    /// failures, 1 for everything the caller can fix by changing inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Cache(_)
            | Error::Encoder { .. }
            | Error::Batch { .. }
            | Error::CampaignPaused(_) => 2,
            _ => 1,
        }
    }
}
