//! Explicit finite MDPs, exact value iteration and tabular Q-learning.
//!
//! Tabular transitions are ordinary [`EpisodeRecord`]s whose feature vectors
//! hold a single entry: the integer state id.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::EpisodeRecord;
use crate::policy::greedy;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Finite MDP with stochastic transitions and deterministic rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `[s][a]`, flattened.
    rewards: Vec<f64>,
}

/// How sampled transitions encode state ids as features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateEncoding {
    /// `[id]`, as consumed by tabular updates.
    Index,
    /// One-hot vector of length `n_states`.
    OneHot,
}

impl FiniteMdp {
    /// `transitions[s][a]` is the distribution over next states; every row
    /// must sum to 1 within 1e-9.
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::contract("MDP needs at least one state"));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::contract("MDP needs at least one action"));
        }
        if rewards.len() != n_states || rewards.iter().any(|r| r.len() != n_actions) {
            return Err(Error::contract(
                "reward table shape does not match transitions",
            ));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transitions.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::contract(format!(
                    "state {s} has {} actions",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::contract(format!("row ({s}, {a}) has wrong length")));
                }
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::contract(format!(
                        "transition row ({s}, {a}) is not stochastic (sums to {total})"
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions: flat,
            rewards: rewards.into_iter().flatten().collect(),
        })
    }

    /// Random MDP: rewards uniform on [0, 1), transition rows from normalized
    /// uniform weights.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = substream(seed, Stream::Init, &[n_states as u64, n_actions as u64]);
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| {
                        let w: Vec<f64> =
                            (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let total: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / total).collect()
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self::new(transitions, rewards).expect("normalized rows are stochastic")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = self.transition_row(s, a);
        for (next, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        // Rounding can leave `acc` a hair below 1.
        row.iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.n_states - 1)
    }

    pub fn encode(&self, s: usize, encoding: StateEncoding) -> Vec<f64> {
        match encoding {
            StateEncoding::Index => vec![s as f64],
            StateEncoding::OneHot => {
                let mut x = vec![0.0; self.n_states];
                x[s] = 1.0;
                x
            }
        }
    }

    /// Logs `episodes` episodes of `length` steps under a uniform-random
    /// behavior policy from uniform-random start states.
    pub fn sample_log(
        &self,
        episodes: usize,
        length: u32,
        encoding: StateEncoding,
        seed: u64,
    ) -> Vec<EpisodeRecord> {
        let mut rng = substream(seed, Stream::Collection, &[]);
        let mut log = Vec::with_capacity(episodes * length as usize);
        for e in 0..episodes {
            let mut s = rng.random_range(0..self.n_states);
            for step in 0..length {
                let a = rng.random_range(0..self.n_actions);
                let next = self.sample_next(s, a, &mut rng);
                log.push(EpisodeRecord {
                    user_id: format!("e{e}"),
                    step,
                    state_features: self.encode(s, encoding),
                    action_index: a,
                    reward: self.reward(s, a),
                    next_state_features: self.encode(next, encoding),
                    terminal: step + 1 == length,
                });
                s = next;
            }
        }
        log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.q[s * self.n_actions + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_action(&self, s: usize) -> usize {
        greedy(self.row(s)).expect("rows are non-empty")
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.greedy_action(s)).collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Resolves `[id]` features to a state id.
    fn state_id(&self, features: &[f64]) -> Result<usize> {
        match features {
            [x] if x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < self.n_states => {
                Ok(*x as usize)
            }
            _ => Err(Error::contract(format!(
                "features {features:?} do not name one of {} states",
                self.n_states
            ))),
        }
    }
}

/// Applies the Bellman optimality operator once.
fn bellman(mdp: &FiniteMdp, q: &QTable, gamma: f64) -> QTable {
    let v: Vec<f64> = (0..mdp.n_states).map(|s| q.max(s)).collect();
    let mut next = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let expected: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&v)
                .map(|(p, v)| p * v)
                .sum();
            next.set(s, a, mdp.reward(s, a) + gamma * expected);
        }
    }
    next
}

/// Sup-norm distance between `q` and its Bellman backup.
pub fn bellman_residual(mdp: &FiniteMdp, q: &QTable, gamma: f64) -> f64 {
    bellman(mdp, q, gamma).sup_distance(q)
}

/// Iterates the Bellman operator from zero until the residual drops below `tol`.
pub fn value_iteration(mdp: &FiniteMdp, gamma: f64, tol: f64) -> Result<QTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::contract(format!(
            "gamma must be in [0, 1), got {gamma}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::contract(format!("tol must be > 0, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let next = bellman(mdp, &q, gamma);
        let change = next.sup_distance(&q);
        q = next;
        // The residual of the new table is at most gamma * change.
        if gamma * change < tol {
            return Ok(q);
        }
    }
}

/// One Q-learning update for the transition in `rec`; terminal records do
/// not bootstrap.
pub fn tabular_q_update(q: &mut QTable, rec: &EpisodeRecord, alpha: f64, gamma: f64) -> Result<()> {
    let s = q.state_id(&rec.state_features)?;
    let next = q.state_id(&rec.next_state_features)?;
    let a = rec.action_index;
    if a >= q.n_actions {
        return Err(Error::contract(format!("action {a} out of range")));
    }
    let target = if rec.terminal {
        rec.reward
    } else {
        rec.reward + gamma * q.max(next)
    };
    let updated = (1.0 - alpha) * q.get(s, a) + alpha * target;
    q.set(s, a, updated);
    Ok(())
}

/// Tabular Q-learning with step size `1 / visits(s, a)`.
#[derive(Debug, Clone)]
pub struct VisitCountQLearning {
    pub table: QTable,
    visits: Vec<u64>,
    gamma: f64,
}

impl VisitCountQLearning {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            table: QTable::zeros(n_states, n_actions),
            visits: vec![0; n_states * n_actions],
            gamma,
        }
    }

    pub fn observe(&mut self, rec: &EpisodeRecord) -> Result<()> {
        let s = self.table.state_id(&rec.state_features)?;
        if rec.action_index >= self.table.n_actions {
            return Err(Error::contract(format!(
                "action {} out of range",
                rec.action_index
            )));
        }
        let count = &mut self.visits[s * self.table.n_actions + rec.action_index];
        *count += 1;
        let alpha = 1.0 / *count as f64;
        tabular_q_update(&mut self.table, rec, alpha, self.gamma)
    }

    /// Runs `updates` updates on `(s, a)` pairs drawn uniformly, with next
    /// states sampled from the MDP.
    pub fn run_sampled(&mut self, mdp: &FiniteMdp, updates: usize, seed: u64) -> Result<()> {
        let mut rng = substream(seed, Stream::Replay, &[]);
        for _ in 0..updates {
            let s = rng.random_range(0..mdp.n_states);
            let a = rng.random_range(0..mdp.n_actions);
            let next = mdp.sample_next(s, a, &mut rng);
            let rec = EpisodeRecord {
                user_id: String::new(),
                step: 0,
                state_features: vec![s as f64],
                action_index: a,
                reward: mdp.reward(s, a),
                next_state_features: vec![next as f64],
                terminal: false,
            };
            self.observe(&rec)?;
        }
        Ok(())
    }
}
