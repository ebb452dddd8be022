use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection, explanation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported norm order p = {0} (supported: 1, 2, 4)")]
    UnsupportedNorm(f64),

    #[error("unsupported relevance rule: {0}")]
    UnsupportedRule(String),

    #[error("kernel exceeds image: kernel {kernel} vs image {height}x{width}")]
    KernelExceedsImage { kernel: usize, height: usize, width: usize },

    #[error("missing label class: {0}")]
    MissingLabelClass(&'static str),

    #[error("gradient descent did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("width bound exceeded: {width} > {limit}")]
    WidthBoundExceeded { width: usize, limit: usize },

    #[error("missing directory: {}", .0.display())]
    MissingDirectory(PathBuf),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARG",
            Error::UnsupportedNorm(_) => "E_NORM",
            Error::UnsupportedRule(_) => "E_RULE",
            Error::KernelExceedsImage { .. } => "E_KERNEL",
            Error::MissingLabelClass(_) => "E_LABELS",
            Error::NonConvergence { .. } => "E_CONVERGE",
            Error::WidthBoundExceeded { .. } => "E_WIDTH",
            Error::MissingDirectory(_) => "E_MISSING",
            Error::Format { .. } => "E_FORMAT",
            Error::Image(_) => "E_IMAGE",
            Error::Json(_) => "E_JSON",
            Error::Io(_) => "E_IO",
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
