use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fields live in different bases")]
    BasisMismatch,

    #[error("input has kernel component {value:e} on mode {mode}")]
    NonStableInput { mode: usize, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solution blew up at fast time {time}")]
    Blowup { time: f64 },

    #[error("fast path covers {available} steps, {required} required")]
    InsufficientPath { required: usize, available: usize },

    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConverged { iterations: usize, residual: f64 },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("configuration rejected:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
