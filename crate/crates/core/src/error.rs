use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("regulariser is not convex; only estimates are supported for it")]
    NonConvexRegulariser,

    #[error("oracle did not reach the duality-gap target {target:e} (gap {gap:e} after {iterations} iterations)")]
    OracleGapNotReached {
        target: f64,
        gap: f64,
        iterations: usize,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty contour at level {0}")]
    EmptyContour(f64),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("image carries a jump; use the jump-aware gap computation")]
    JumpNotSupported,

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("refusing to overwrite existing file {0} (pass --force)")]
    WouldOverwrite(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
