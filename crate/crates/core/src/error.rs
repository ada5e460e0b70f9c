use std::path::PathBuf;

/// Errors raised by the toolkit.
///
/// Variants are grouped so callers can map them onto process exit codes:
/// configuration problems, bad input data, and numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("coverage error: model `{model}` has no rows in baseline window {window}")]
    Coverage { model: String, window: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Shape(_) => ErrorClass::Validation,
            Error::Schema(_)
            | Error::Data { .. }
            | Error::Consistency(_)
            | Error::Coverage { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => ErrorClass::Data,
            Error::Numerical(_) => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
