use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum RescalError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("dense materialization of N={n} exceeds the cap of {cap} entities")]
    ResourceLimit { n: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite objective at iteration {iteration} (f = {value}, |x|_2 = {x_norm}, |g|_inf = {grad_norm})")]
    NonFinite {
        iteration: usize,
        value: f64,
        x_norm: f64,
        grad_norm: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RescalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RescalError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input or configuration rather than a
    /// failure during the computation itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            RescalError::Parse { .. }
                | RescalError::Config(_)
                | RescalError::Io { .. }
                | RescalError::VersionMismatch { .. }
                | RescalError::CorruptFile(_)
                | RescalError::Dimension(_)
                | RescalError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, RescalError>;
