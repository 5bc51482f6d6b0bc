//! Crate-wide error type.

/// Errors raised by the signal, labeling, neural, detection and experiment layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A declared channel column is missing or a channel name is not recognized.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed; carries the 1-based data row number.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// A record with zero samples.
    #[error("empty record: {0}")]
    EmptyRecord(String),

    /// A signal shorter than the operation's minimum length.
    #[error("signal too short: {0}")]
    TooShort(String),

    /// Tensor or layer dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Checkpoint magic/version/CRC mismatch or truncation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite loss or gradient during optimization.
    #[error("training error: {0}")]
    Training(String),

    /// Invalid experiment or dataset configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values at a layer boundary.
    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable class name, used for single-line CLI failures.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::EmptyRecord(_) => "empty-record",
            Error::TooShort(_) => "too-short",
            Error::Shape(_) => "shape",
            Error::Checkpoint(_) => "checkpoint",
            Error::Training(_) => "training",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non-finite",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
