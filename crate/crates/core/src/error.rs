use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::syntax::TreeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("document {doc_id}, sentence {sentence}: {kind}")]
    Tree {
        doc_id: String,
        sentence: usize,
        kind: TreeError,
    },
    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

/// Broad failure classes, used by the command-line front end to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Mismatch(_) => ErrorClass::Config,
            Error::NumericFailure(_) | Error::Numerics(_) => ErrorClass::Numeric,
            Error::Io { .. } | Error::Json { .. } | Error::Tree { .. } | Error::Document { .. } | Error::Data(_) => {
                ErrorClass::Data
            }
        }
    }
}
