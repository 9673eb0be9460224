use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the fusion toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {context}: {a} vs {b}")]
    ShapeMismatch {
        context: &'static str,
        a: String,
        b: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad file format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

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

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(context: &'static str, a: impl ToString, b: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            a: a.to_string(),
            b: b.to_string(),
        }
    }
}
