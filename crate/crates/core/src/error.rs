use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum SsteError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("insufficient history: need at least {needed} observations, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("degenerate series: zero variance")]
    DegenerateSeries,

    #[error("check-in at {checkin_time} lies after the evaluation time {now}")]
    FutureCheckin { checkin_time: i64, now: i64 },

    #[error("AR polynomial is not stationary (root modulus {modulus:.6})")]
    UnstableAr { modulus: f64 },

    #[error("non-finite value during Kalman update; state rolled back")]
    NonFinite,

    #[error("no candidate regions for user {user}")]
    NoCandidates { user: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SsteError {
    pub(crate) fn invalid(name: &str, message: impl Into<String>) -> Self {
        SsteError::InvalidParameter {
            name: name.to_string(),
            message: message.into(),
        }
    }

    /// Usage-type errors (bad parameters) versus data errors; drives CLI exit codes.
    pub fn is_usage(&self) -> bool {
        matches!(self, SsteError::InvalidParameter { .. })
    }
}

pub type Result<T, E = SsteError> = std::result::Result<T, E>;
