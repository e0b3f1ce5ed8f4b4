//! Frequency control for recommendation delivery.
//!
//! Per-user delivery frequencies are chosen from learned long-term Q-values,
//! and global delivery volume is held on target by an Effective-Factor (EF)
//! selection layer whose single scalar knob is steered by a PID loop.
//!
//! Modules, bottom-up:
//!
//! - [`domain`]: action sets, reward, cohorts and day aggregates.
//! - [`episode`]: logged transitions, episode validation and the NDJSON log.
//! - [`env`]: synthetic user population with fatigue, churn and activation.
//! - [`learner`]: value iteration, tabular Q-learning and a dueling double DQN.
//! - [`policy`]: greedy, EF and exploratory selection over Q-value vectors.
//! - [`volume`]: volume monitoring and the PID loop driving EF.
//! - [`experiment`]: collect / train / evaluate / report pipeline.

pub mod domain;
pub mod env;
pub mod episode;
mod error;
pub mod experiment;
pub mod json;
pub mod learner;
pub mod policy;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
