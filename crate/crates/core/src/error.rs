use std::path::PathBuf;

use crate::training::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("no calibration curve for cell (row {row}, col {col})")]
    MissingCurve { row: usize, col: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported checkpoint format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("training diverged: non-finite loss at step {step}")]
    Diverged {
        step: usize,
        checkpoint: Box<Checkpoint>,
    },

    #[error(
        "centralized model was built for a {trained_h}x{trained_w} grid and cannot process a {got_h}x{got_w} grid"
    )]
    FixedInputSize {
        trained_h: usize,
        trained_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
