use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] advsal_core::Error),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {message}")]
    Parse { what: &'static str, path: PathBuf, message: String },
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{artifact} was produced by config {found}, expected {expected} (use --force to override)")]
    HashMismatch { artifact: PathBuf, expected: String, found: String },
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { path: path.into(), message: message.into() }
    }

    /// Whether the error stems from invalid user input rather than a failure
    /// while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config { .. }
                | Self::MissingArtifact(_)
                | Self::HashMismatch { .. }
                | Self::Locked(_)
                | Self::UnsupportedFormat(_)
                | Self::Parse { .. }
        ) || matches!(self, Self::Core(advsal_core::Error::InvalidArguments(_) | advsal_core::Error::InvalidTarget(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
