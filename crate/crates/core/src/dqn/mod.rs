//! Deep Q-learning agent that picks which sector the camera should watch.
//!
//! Everything here is small enough to run on a CPU in seconds: a
//! `[state, 24, 24, actions]` ReLU network, a ring replay buffer,
//! epsilon-greedy exploration and plain SGD on the batch TD error.

pub mod checkpoint;
pub mod env;
pub mod network;
pub mod replay;
pub mod trainer;

use thiserror::Error;

pub use env::{oracle_choice, state_vector, SectorEnv, FEATURES_PER_NODE};
pub use network::{Dense, Gradients, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{
    argmax, greedy_agreement, moving_average, run_training, select_action, td_target,
    train_batch, train_network, TrainerConfig, TrainingMetrics,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqnError {
    #[error("state has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DqnError {
    fn from(e: std::io::Error) -> Self {
        DqnError::Io(e.to_string())
    }
}
