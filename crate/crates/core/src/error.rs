use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// The variants follow the error classes used across the crate (shape, state,
/// config, ...) so callers such as the CLI can map them onto stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("integrity error: {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// True for errors caused by the data files rather than the configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Consistency(_)
                | Error::Parse { .. }
                | Error::Network(_)
                | Error::Integrity { .. }
                | Error::Io(_)
                | Error::VersionMismatch(_)
                | Error::CorruptPayload(_)
        )
    }
}
