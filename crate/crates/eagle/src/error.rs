use std::path::PathBuf;

use eagle_core::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] eagle_core::Error),
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image {context}: {message}")]
    Image { context: String, message: String },
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }

    /// Whether the failure came from the oracle rather than from the caller's input.
    pub fn is_oracle(&self) -> bool {
        matches!(
            self,
            Self::Oracle(_)
                | Self::Core(eagle_core::Error::Oracle(_) | eagle_core::Error::OracleRound { .. })
        )
    }
}
