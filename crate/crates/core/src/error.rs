use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input makes the requested quantity undefined (e.g. a spatially
    /// constant reference field in a relative error).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A rollout produced non-finite values. `block` is 1-based.
    #[error("numerical divergence at block {block}")]
    Divergence { block: usize },

    /// A training stage still diverged after its retry.
    #[error("training diverged in stage {stage}")]
    TrainingDiverged { stage: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
