use thiserror::Error;

pub type Result<T, E = ApemoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ApemoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("schema version {found} is not supported (expected major {expected})")]
    Schema { found: String, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ApemoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures that come from the model server rather than from us.
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Transport { .. } | Self::Protocol(_))
    }
}
