use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("ground plane low confidence: inlier ratio {ratio:.3} below floor {floor:.3}")]
    LowConfidence { ratio: f64, floor: f64 },

    #[error("length mismatch: {left} clouds vs {right} poses")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("bad magic or version: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row side has too few points: {0}")]
    SideMissing(String),

    #[error("closed loop diverged at step {step}: lateral offset {y:.3} m exceeds {limit:.3} m")]
    Divergence { step: usize, y: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
