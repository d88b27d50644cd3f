use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the tracking engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: bad magic, expected \"USTV\"")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: unsupported dtype code {code}")]
    UnsupportedDtype { path: PathBuf, code: u8 },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: dimensions {t}x{h}x{w} overflow")]
    DimensionOverflow { path: PathBuf, t: u32, h: u32, w: u32 },

    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("query point {point} is marked invalid at the query frame")]
    InvalidQueryPoint { point: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular transform (determinant {det})")]
    SingularTransform { det: f64 },

    #[error("no valid (point, frame) pairs to evaluate")]
    EmptyEvaluation,

    #[error("loss has no valid entries")]
    EmptyLoss,

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tolerance:.1e}")]
    GradientCheck { max_rel_err: f64, tolerance: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::Diverged { .. } | Error::GradientCheck { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
