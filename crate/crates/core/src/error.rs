use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the error classes
/// reported by the CLI, so `class()` must stay in sync with them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quaternion norm off unit by {deviation:.3e} (tolerance {tolerance:.1e})")]
    NotUnitQuaternion { deviation: f64, tolerance: f64 },

    #[error("trajectory too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("optimization: {0}")]
    Optimization(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable class name, used in CLI error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NotUnitQuaternion { .. } => "not-unit-quaternion",
            Error::TooShort { .. } => "too-short",
            Error::Skeleton(_) => "skeleton",
            Error::ModelFormat(_) => "model-format",
            Error::Config(_) => "config",
            Error::Optimization(_) => "optimization",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
