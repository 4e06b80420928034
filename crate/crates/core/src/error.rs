use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, lengths or indices that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A configuration value failed validation.
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// A line of a JSON-lines file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A JSON document (checkpoint, env model, manifest) could not be parsed.
    #[error("invalid document {path}: {message}")]
    Document { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input: {0}")]
    Missing(PathBuf),

    /// A loss, gradient or parameter became non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation called in the wrong lifecycle state (e.g. unfitted model).
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Missing(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Config { .. } => 3,
            _ => 1,
        }
    }
}
