use thiserror::Error;

pub type Result<T> = std::result::Result<T, GesaError>;

#[derive(Debug, Error)]
pub enum GesaError {
    /// Input could not be parsed at all (as opposed to parsing fine but
    /// breaking an invariant).
    #[error("format error: {0}")]
    Format(String),

    #[error("dataset failed validation with {0} violation(s)")]
    InvalidDataset(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("no front member satisfies the mandatory constraints")]
    NoCompliantSolution,

    #[error("cold start: no latent factors for {kind} `{id}`")]
    ColdStart { kind: &'static str, id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for GesaError {
    fn from(err: serde_json::Error) -> Self {
        GesaError::Format(err.to_string())
    }
}
