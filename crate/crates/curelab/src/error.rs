//! Crate-wide error type.

use thiserror::Error;

/// Error type for all curelab operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the violated bound.
    #[error("config error: {0}")]
    Config(String),

    /// A forward pass produced NaN or infinite logits, which signals
    /// parameter blow-up.
    #[error("non-finite logits at response position {position}")]
    NonFiniteLogits { position: usize },

    /// An importance ratio was NaN or infinite, which signals a stale
    /// old-policy snapshot or numerical blow-up.
    #[error("non-finite importance ratio in trajectory {trajectory} at token {position}")]
    NonFiniteRatio { trajectory: usize, position: usize },

    /// The optimizer produced a non-finite update; parameters were left
    /// untouched.
    #[error("non-finite optimizer update; parameters unchanged")]
    NonFiniteUpdate,

    /// A group with identical rewards cannot be standardized.
    #[error("zero reward standard deviation in group of {group_size}; cannot standardize")]
    ZeroRewardStd { group_size: usize },

    /// Dynamic sampling could not fill a batch: the policy is degenerate
    /// (all-correct or all-incorrect on every query).
    #[error(
        "batch fill exhausted after {rounds} generation rounds: kept {kept} of {needed} \
         groups, discarded {discarded} as all-correct or all-incorrect"
    )]
    BatchExhausted {
        rounds: usize,
        kept: usize,
        needed: usize,
        discarded: usize,
    },

    /// Checkpoint contents disagree with their declared shapes.
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A training run stopped before its configured step budget.
    #[error("training aborted: {0}")]
    TrainingAborted(String),

    /// Gradient audit exceeded tolerance.
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
