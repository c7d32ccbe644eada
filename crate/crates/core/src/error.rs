use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the toolkit.
///
/// Each variant maps onto one of the CLI exit codes: usage problems exit 1,
/// data problems exit 2 and numerical failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("{0}")]
    Data(String),

    #[error("model blob: {0}")]
    Blob(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn row(row: usize, msg: impl Into<String>) -> Self {
        Error::Row {
            row,
            message: msg.into(),
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Row { .. } | Error::Data(_) | Error::Blob(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize);
        match row {
            Some(row) => Error::row(row, e.to_string()),
            None => Error::Data(e.to_string()),
        }
    }
}
