use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        path: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: row {row}, column {col}: unparseable number {token:?}")]
    BadNumber {
        path: String,
        row: usize,
        col: usize,
        token: String,
    },
    #[error("{path}: fewer than 2 data rows after cleaning (got {rows})")]
    TooFewRows { path: String, rows: usize },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file invalid: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
