use thiserror::Error;

/// Errors raised by the acrobot model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite input to dynamics: {0}")]
    NonFinite(&'static str),
    #[error("state diverged (|component| > {limit:e}) after {substeps} substeps")]
    Diverged { limit: f64, substeps: usize },
    #[error("trajectory has {len} states, need at least {needed}")]
    TrajectoryTooShort { len: usize, needed: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Errors raised by the network stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("tape was recorded on a network with a different topology")]
    TapeMismatch,
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("non-finite gradient at parameter {index}; update rejected")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Errors raised by the Riccati solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular linear system while solving {0}")]
    Singular(&'static str),
    #[error("could not find a stabilizing initial gain")]
    NotStabilizable,
    #[error("Newton-Kleinman did not converge in {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
}

/// Top-level error for training, evaluation and file I/O.
#[derive(Debug, Error)]
pub enum SsacError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error("replay buffers are empty")]
    EmptyReplay,
    #[error("gate buffer is empty")]
    EmptyGateBuffer,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} loss at update {update}")]
    NonFiniteLoss { what: &'static str, update: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = SsacError> = std::result::Result<T, E>;
