//! Q-function learning.
//!
//! [`tabular`] holds exact value iteration and tabular Q-learning for small
//! explicit MDPs, used as oracles. [`network`] and [`dqn`] hold the dueling
//! double-Q network trained off-policy from episode logs.

pub mod checkpoint;
pub mod dqn;
pub mod network;
pub mod replay;
pub mod tabular;

pub use checkpoint::Checkpoint;
pub use dqn::{
    double_q_target, train_batch, train_from_log, Hyperparams, OptimizerKind, TrainOutcome, Trainer,
};
pub use network::{gradient_check, QNetwork};
pub use replay::ReplayBuffer;
pub use tabular::{tabular_q_update, value_iteration, FiniteMdp, QTable, StateEncoding};
