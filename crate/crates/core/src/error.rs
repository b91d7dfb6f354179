use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented invariant or contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// A data file could not be parsed.
    #[error("parse error in {path} at line {line}, field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        field: String,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}
