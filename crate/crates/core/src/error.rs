use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("degenerate mask: channel {channel} has mass {mass:e}")]
    DegenerateMask { channel: usize, mass: f64 },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss { step: usize, loss: f64, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn shape_mismatch(expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: alloc::format!("{expected:?}"),
        got: alloc::format!("{got:?}"),
    }
}
