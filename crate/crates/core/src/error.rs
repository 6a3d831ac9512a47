use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, grid sides or symbol counts that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Power normalization of an all-zero block.
    #[error("degenerate power: cannot normalize an all-zero block (item {item})")]
    DegeneratePower { item: usize },

    #[error("degenerate pilot block: pilot energy is zero")]
    DegeneratePilot,

    #[error("deep fade: |h_est| = {magnitude:e} is below the equalization floor")]
    DeepFade { magnitude: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error in {path}: record {record}: {reason}")]
    Parse {
        path: PathBuf,
        record: usize,
        reason: String,
    },

    #[error("empty stream: {0}")]
    EmptyStream(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("missing checkpoint(s) for variant(s): {}", .0.join(", "))]
    MissingCheckpoint(Vec<String>),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
