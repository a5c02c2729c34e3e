use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Numeric(#[from] wm_numeric::NumericError),
    #[error(transparent)]
    Symbol(#[from] crate::symbols::BackendError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
