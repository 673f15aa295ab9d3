use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration of {count} items exceeds the cap of {cap}; use the binomial oracle instead")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("simplex lattice of {count} points exceeds the cap of {cap}")]
    LatticeCap { count: u128, cap: u128 },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid opponent profile: {0}")]
    InvalidProfile(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation requires a family parameterized by {expected}")]
    WrongParameterKind { expected: &'static str },

    #[error("parameter value {v} outside of range [{min}, {max}]")]
    OutOfRange { v: f64, min: f64, max: f64 },

    #[error("parameter value {0} is not an integer player count")]
    NonIntegerPlayers(f64),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("corrupt model file {path}: {reason}")]
    CorruptModel { path: PathBuf, reason: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("network spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("CSV schema error: {0}")]
    Schema(String),
}

impl Error {
    /// Whether the error stems from user-provided configuration rather than a
    /// runtime failure. Drives the CLI exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::Toml(_)
                | Error::WrongParameterKind { .. }
                | Error::OutOfRange { .. }
                | Error::NonIntegerPlayers(_)
                | Error::SpecMismatch(_)
        )
    }
}
