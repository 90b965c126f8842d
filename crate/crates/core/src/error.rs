use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {index} out of range for {len}")]
    Index { index: usize, len: usize },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure during computation. The CLI maps these to exit status 2.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Training { .. } | Error::Io { .. })
    }
}
