//! Off-policy DQN training from logged transitions: double-Q targets, a
//! periodically synced target network and uniform experience replay.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{validate_log, EpisodeRecord};
use crate::policy::greedy;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

use super::network::QNetwork;
use super::replay::ReplayBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Discount factor in [0, 1).
    pub gamma: f64,
    /// Learning rate.
    pub alpha: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Training steps between target-network syncs.
    pub target_sync_interval: usize,
    pub hidden_sizes: Vec<usize>,
    pub training_steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 0.01,
            batch_size: 64,
            replay_capacity: 500_000,
            target_sync_interval: 250,
            hidden_sizes: vec![64, 32],
            training_steps: 10_000,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::contract(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::contract(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        let sizes = [
            self.batch_size,
            self.replay_capacity,
            self.target_sync_interval,
        ];
        if sizes.contains(&0) || self.hidden_sizes.contains(&0) {
            return Err(Error::contract(
                "batch, replay, sync and layer sizes must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Bootstrapped target: `r` for terminal records, otherwise
/// `r + gamma * target_Q(s', argmax_a online_Q(s', a))` with ties broken
/// towards the lowest index.
pub fn double_q_target(
    online: &QNetwork,
    target: &QNetwork,
    rec: &EpisodeRecord,
    gamma: f64,
) -> Result<f64> {
    if rec.terminal {
        return Ok(rec.reward);
    }
    let next_online = online.forward(&rec.next_state_features)?;
    let best = greedy(&next_online)?;
    let next_target = target.forward(&rec.next_state_features)?;
    Ok(rec.reward + gamma * next_target[best])
}

/// Optimizer state carried across training steps.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    steps: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam {
            num_params
        } else {
            0
        };
        Self {
            kind,
            steps: 0,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn apply(&mut self, net: &mut QNetwork, grad: &QNetwork, alpha: f64) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => net.zip_params_mut(grad, |_, p, g| *p -= alpha * g),
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let t = self.steps as i32;
                let c1 = 1.0 - B1.powi(t);
                let c2 = 1.0 - B2.powi(t);
                let (m, v) = (&mut self.first, &mut self.second);
                net.zip_params_mut(grad, |k, p, g| {
                    m[k] = B1 * m[k] + (1.0 - B1) * g;
                    v[k] = B2 * v[k] + (1.0 - B2) * g * g;
                    *p -= alpha * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                });
            }
        }
    }
}

/// One gradient step on the mean squared TD error of `batch`.
///
/// Returns the loss measured before the step.
pub fn train_batch(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[&EpisodeRecord],
    hp: &Hyperparams,
    opt: &mut OptimizerState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("training batch is empty"));
    }
    if !net.same_architecture(target) {
        return Err(Error::contract(
            "online and target networks differ in architecture",
        ));
    }
    let scale = 2.0 / batch.len() as f64;
    let mut grad = net.zeros_like();
    let mut loss = 0.0;
    let mut dq = vec![0.0; net.num_actions()];
    for rec in batch {
        if rec.action_index >= net.num_actions() {
            return Err(Error::contract(format!(
                "action {} out of range",
                rec.action_index
            )));
        }
        let y = double_q_target(net, target, rec, hp.gamma)?;
        let cache = net.forward_cached(&rec.state_features)?;
        let td = cache.q[rec.action_index] - y;
        loss += td * td;
        dq.fill(0.0);
        dq[rec.action_index] = scale * td;
        net.backward(&cache, &dq, &mut grad);
    }
    loss /= batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step: opt.steps(),
            loss,
        });
    }
    opt.apply(net, &grad, hp.alpha);
    Ok(loss)
}

/// Online network, target network, replay buffer and optimizer.
pub struct Trainer {
    pub online: QNetwork,
    pub target: QNetwork,
    buffer: ReplayBuffer,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    hp: Hyperparams,
}

impl Trainer {
    pub fn new(hp: &Hyperparams, input_dim: usize, num_actions: usize) -> Result<Self> {
        hp.validate()?;
        let online = QNetwork::new(input_dim, &hp.hidden_sizes, num_actions, hp.seed)?;
        Ok(Self {
            target: online.clone(),
            opt: OptimizerState::new(hp.optimizer, online.num_params()),
            online,
            buffer: ReplayBuffer::new(hp.replay_capacity),
            rng: substream(hp.seed, Stream::Replay, &[]),
            hp: hp.clone(),
        })
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffer
    }

    pub fn steps(&self) -> usize {
        self.opt.steps()
    }

    /// Samples a batch, takes one gradient step and syncs the target network
    /// every `target_sync_interval` steps.
    pub fn step(&mut self) -> Result<f64> {
        if self.buffer.is_empty() {
            return Err(Error::contract("replay buffer is empty"));
        }
        let batch = self.buffer.sample(self.hp.batch_size, &mut self.rng);
        let loss = train_batch(
            &mut self.online,
            &self.target,
            &batch,
            &self.hp,
            &mut self.opt,
        )?;
        if self
            .opt
            .steps()
            .is_multiple_of(self.hp.target_sync_interval)
        {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    /// Pre-step loss of every training step.
    pub losses: Vec<f64>,
}

/// Trains a fresh network on a validated episode log.
pub fn train_from_log(
    log: &[EpisodeRecord],
    hp: &Hyperparams,
    num_actions: usize,
) -> Result<TrainOutcome> {
    validate_log(log)?;
    let input_dim = log[0].state_features.len();
    if let Some(bad) = log.iter().find(|r| {
        r.state_features.len() != input_dim
            || r.next_state_features.len() != input_dim
            || r.action_index >= num_actions
            || !r.reward.is_finite()
    }) {
        return Err(Error::contract(format!(
            "record {}/{} does not fit a {input_dim}-feature, {num_actions}-action log",
            bad.user_id, bad.step
        )));
    }

    let mut trainer = Trainer::new(hp, input_dim, num_actions)?;
    for r in log {
        trainer.buffer_mut().push(r.clone());
    }
    let mut losses = Vec::with_capacity(hp.training_steps);
    for _ in 0..hp.training_steps {
        losses.push(trainer.step()?);
    }
    Ok(TrainOutcome {
        network: trainer.online,
        losses,
    })
}
