use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("invalid cycle length: {0}")]
    InvalidCycleLength(i64),
    #[error("invalid action")]
    InvalidAction,
    #[error("invalid gait primitive: {0}")]
    InvalidGaitPrimitive(String),
    #[error("params outside gait parameter ranges: {0}")]
    ParamsOutOfRange(String),
    #[error("no dominant paddle frequency")]
    NoDominantFrequency,
    #[error("signal too short for cycle detection: {got} samples, need {need}")]
    SignalTooShort { got: usize, need: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical abort: {0}")]
    NumericalAbort(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config fingerprint mismatch: checkpoint {found}, expected {expected}")]
    FingerprintMismatch { found: String, expected: String },
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
