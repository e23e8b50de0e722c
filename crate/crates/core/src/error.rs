//! Error type shared by the whole crate.
//!
//! Construction-time validation (shapes, configs, file contents) reports
//! through these variants; the numeric hot paths assume validated inputs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// An operation received tensors whose shapes cannot be combined.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A parameter name was requested that the store does not contain.
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    /// An optimizer step was attempted before any backward pass populated
    /// gradients.
    #[error("optimizer step requires populated gradients; run a backward pass first")]
    GradientsMissing,

    /// Checkpoint file is malformed or inconsistent with the running model.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Invalid configuration value.
    #[error("config: {0}")]
    Config(String),

    /// A scene file failed to parse; `line` is 1-based.
    #[error("scene file line {line}: {message}")]
    SceneLine { line: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Catch-all for precondition violations that have no richer variant.
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
