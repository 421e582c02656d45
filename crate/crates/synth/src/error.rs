use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mixing matrix failed the rank criterion after {attempts} draws")]
    RankFailure { attempts: usize },

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("scale parameter must be strictly positive")]
    NonPositiveScale,

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("empty labeled set")]
    EmptyTrainingSet,

    #[error("empty test set")]
    EmptyTestSet,
}
