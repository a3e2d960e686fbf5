use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("{context}:{line}: parse error: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("malformed box {0:?}: need x1 <= x2 and y1 <= y2, all non-negative")]
    MalformedBox([i64; 4]),

    #[error("box ({x1},{y1})-({x2},{y2}) lies outside a {width}x{height} image")]
    OutOfBounds {
        x1: usize,
        y1: usize,
        x2: usize,
        y2: usize,
        width: usize,
        height: usize,
    },

    #[error("image too small: {width}x{height}, need at least {min_width}x{min_height}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate polygon after projection (area {area:.3e})")]
    DegeneratePolygon { area: f64 },

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("covariance is not positive definite even after ridge regularization")]
    NotPositiveDefinite,

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class `{0}` has no training samples")]
    EmptyClass(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("class lists differ between models: {0:?} vs {1:?}")]
    ClassListMismatch(Vec<String>, Vec<String>),

    #[error("detections are not sorted by descending score (index {0})")]
    Unsorted(usize),

    #[error("model container: {0}")]
    Container(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable category used by the CLI for exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Codec { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::UnknownClass(_) | Error::LabelOutOfRange { .. } | Error::EmptyClass(_) => {
                "dataset"
            }
            Error::MalformedBox(_) | Error::OutOfBounds { .. } | Error::ImageTooSmall { .. } => {
                "geometry"
            }
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_) | Error::InvalidSpec(_) => {
                "invalid-input"
            }
            Error::DegeneratePolygon { .. } => "render",
            Error::NotEnoughSamples { .. } | Error::NotPositiveDefinite => "prune",
            Error::NonFiniteLoss { .. } => "training",
            Error::ClassListMismatch(..) => "model",
            Error::Unsorted(_) => "eval",
            Error::Container(_) => "model",
        }
    }
}
