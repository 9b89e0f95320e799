use thiserror::Error;

/// Errors raised by tensor kernels, attention layers and the decoder.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error ({dim}): {msg}")]
    Geometry { dim: &'static str, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn geometry(dim: &'static str, msg: impl Into<String>) -> Self {
        Error::Geometry { dim, msg: msg.into() }
    }
}
