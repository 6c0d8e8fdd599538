use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bytes that are not a well-formed NPY file.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file this toolkit does not read (dtype, order, version, rank).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Payload that parsed but carries values we refuse (NaN/Inf).
    #[error("data error: {0}")]
    Data(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Operation called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Prefix the message with the layer (or other context) it came from.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// True for errors caused by bad inputs rather than by the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::UnsupportedFormat(_)
                | Error::Data(_)
                | Error::Validation(_)
                | Error::Json { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
