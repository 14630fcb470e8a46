use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {0} lies outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("score is singular at t = {t}: evaluations require t < 1 - {delta}")]
    ScoreSingularity { t: f64, delta: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("boundary function set `{name}` violates its endpoint constraints ({detail})")]
    BoundaryConstraint { name: String, detail: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FlowError {
    /// True for errors that signal numerical divergence rather than misuse.
    pub fn is_divergence(&self) -> bool {
        matches!(self, FlowError::NonFinite(_) | FlowError::Diverged { .. })
    }
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;
