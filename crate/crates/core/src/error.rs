use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("adaptive filter diverged at sample {sample}")]
    Diverged { sample: u64 },

    #[error("pre-training failed for band {index} ({low_hz}-{high_hz} Hz): {reason}")]
    PretrainFailed {
        index: usize,
        low_hz: f64,
        high_hz: f64,
        reason: String,
    },

    #[error("shape mismatch in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite value in `{what}`")]
    NonFinite { what: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("{mode} simulation failed at sample {sample}")]
    Simulation { mode: String, sample: u64 },

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
