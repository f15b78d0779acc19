use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid response for {family}: y = {value} at row {row}")]
    InvalidResponse {
        family: &'static str,
        value: f64,
        row: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite log-likelihood in cluster {cluster}")]
    NonFinite { cluster: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("too many failed fits: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("unknown scenario '{name}'; available: {available}")]
    UnknownScenario { name: String, available: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
