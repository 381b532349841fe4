use thiserror::Error;

/// Every fallible operation in the crate returns this.
#[derive(Debug, Error)]
pub enum Error {
    #[error("genome shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid gene: {0}")]
    InvalidGene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no feasible architecture after {attempts} consecutive rejections")]
    Infeasible { attempts: usize },

    #[error("architecture has no active conv layers")]
    NoActiveLayers,

    #[error("latency model required but not provided")]
    MissingLatencyModel,

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("empty cache")]
    EmptyCache,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
