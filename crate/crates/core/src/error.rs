use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("fit diverged at step {step}; last finite loss {last_finite_loss:?}")]
    Diverged {
        step: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("parameter budget violated for {family}: {params} vs reference {reference} ({rel_diff:+.4})")]
    BudgetViolation {
        family: String,
        params: usize,
        reference: usize,
        rel_diff: f64,
    },

    #[error("missing frame index {index} in {dir}")]
    MissingFrame { dir: PathBuf, index: usize },

    #[error("inconsistent frame geometry in {path}: expected {expected:?}, found {found:?}")]
    InconsistentGeometry {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedImage { path: PathBuf, detail: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch for tensor `{name}`")]
    Checksum { name: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by the filesystem rather than by the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
