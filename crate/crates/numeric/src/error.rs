use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NumericError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NumericError {
    NumericError::Shape {
        op,
        detail: detail.into(),
    }
}
