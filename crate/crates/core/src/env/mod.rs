//! Synthetic user population.
//!
//! Each user carries a hidden engagement propensity `theta`, a fatigue level
//! `phi` that builds with delivery frequency, and an active/dormant flag.
//! Deliveries raise the day's metrics with diminishing returns, fatigue
//! depresses them, saturated fatigue can churn a user into dormancy, and
//! enough accumulated deliveries wake a dormant user up again.
//!
//! Population-wide drift scales engagement and the share of users whose
//! scheduling decision is due on a given day.

mod discrete;

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{reward, ActionSet, Cohort, DayOutcome, FrequencyAction, RewardParams};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

pub use discrete::{fatigue_chain_mdp, FatigueChain};

/// Length of the observable feature vector.
pub const FEATURE_DIM: usize = 8;

/// Number of component daily metrics the environment emits.
pub const NUM_METRICS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    /// Exposure saturation rate.
    pub lambda: f64,
    /// Fatigue persistence per day.
    pub rho: f64,
    /// Fatigue added by a full-frequency day.
    pub kappa: f64,
    pub churn_threshold: f64,
    pub churn_prob: f64,
    /// Deliveries a dormant user must accumulate to become active.
    pub activation_threshold: f64,
    pub population_size: usize,
    pub seed: u64,
    /// Share of users that start dormant.
    pub dormant_fraction: f64,
    /// Days of frequency history kept per user.
    pub history_window: usize,
    /// Base probability that a user's scheduling decision is due on a day,
    /// before the drift multiplier is applied.
    pub due_prob: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            rho: 0.8,
            kappa: 0.3,
            churn_threshold: 0.95,
            churn_prob: 0.5,
            activation_threshold: 6.0,
            population_size: 20_000,
            seed: 0,
            dormant_fraction: 0.2,
            history_window: 7,
            due_prob: 1.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 9] = [
            (self.lambda > 0.0, "lambda must be > 0"),
            ((0.0..1.0).contains(&self.rho), "rho must be in [0, 1)"),
            (self.kappa >= 0.0, "kappa must be >= 0"),
            (
                (0.0..=1.0).contains(&self.churn_prob),
                "churn_prob must be in [0, 1]",
            ),
            (
                self.activation_threshold > 0.0,
                "activation_threshold must be > 0",
            ),
            (self.population_size >= 1, "population_size must be >= 1"),
            (
                (0.0..=1.0).contains(&self.dormant_fraction),
                "dormant_fraction must be in [0, 1]",
            ),
            (self.history_window >= 1, "history_window must be >= 1"),
            (
                self.due_prob > 0.0 && self.due_prob <= 1.0,
                "due_prob must be in (0, 1]",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::contract(*msg)),
            None => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let params: Self = crate::json::read_json(path)?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub id: u32,
    /// Latent engagement propensity, never observed by policies.
    pub theta: f64,
    /// Fatigue in [0, 1].
    pub phi: f64,
    pub active: bool,
    pub activation_credit: f64,
    pub cohort: Cohort,
    /// Most recent delivered frequencies, oldest first.
    pub history: VecDeque<u32>,
}

impl UserState {
    pub fn new(id: u32, theta: f64, cohort: Cohort, active: bool) -> Self {
        Self {
            id,
            theta,
            phi: 0.0,
            active,
            activation_credit: 0.0,
            cohort,
            history: VecDeque::new(),
        }
    }
}

/// Metric components produced by `deliveries` sends to an active user.
pub fn engagement(
    theta: f64,
    phi: f64,
    deliveries: u32,
    lambda: f64,
    f_max: u32,
    day_multiplier: f64,
) -> [f64; NUM_METRICS] {
    let f = f64::from(deliveries);
    let exposure = 1.0 - (-lambda * f).exp();
    let reach = (f / f64::from(f_max)).min(1.0);
    [
        theta * exposure * (1.0 - phi) * day_multiplier,
        theta * reach * (1.0 - phi * phi) * day_multiplier,
    ]
}

/// Advances one user by one day at frequency `f`.
pub fn step_user<R: Rng + ?Sized>(
    u: &UserState,
    f: FrequencyAction,
    params: &EnvParams,
    f_max: u32,
    day_multiplier: f64,
    rng: &mut R,
) -> (UserState, [f64; NUM_METRICS]) {
    advance(u, f.value, params, f_max, day_multiplier, rng)
}

fn advance<R: Rng + ?Sized>(
    u: &UserState,
    deliveries: u32,
    params: &EnvParams,
    f_max: u32,
    day_multiplier: f64,
    rng: &mut R,
) -> (UserState, [f64; NUM_METRICS]) {
    debug_assert!(day_multiplier > 0.0);
    let mut next = u.clone();
    let metrics = if u.active {
        engagement(
            u.theta,
            u.phi,
            deliveries,
            params.lambda,
            f_max,
            day_multiplier,
        )
    } else {
        next.activation_credit += f64::from(deliveries);
        if next.activation_credit >= params.activation_threshold {
            next.active = true;
            next.activation_credit = 0.0;
        }
        [0.0; NUM_METRICS]
    };

    next.phi = (params.rho * u.phi + params.kappa * f64::from(deliveries) / f64::from(f_max))
        .clamp(0.0, 1.0);
    if next.phi >= params.churn_threshold && rng.random::<f64>() < params.churn_prob {
        next.active = false;
        next.activation_credit = 0.0;
    }

    next.history.push_back(deliveries);
    while next.history.len() > params.history_window {
        next.history.pop_front();
    }
    (next, metrics)
}

/// Observable features of a user; `theta` is deliberately left out.
///
/// Layout: `[phi, active, mean recent frequency / f_max, std recent
/// frequency / f_max, high, medium, low, activation credit / threshold]`.
pub fn features(u: &UserState, params: &EnvParams, f_max: u32) -> Vec<f64> {
    let scale = f64::from(f_max);
    let (mean, std) = if u.history.is_empty() {
        (0.0, 0.0)
    } else {
        let n = u.history.len() as f64;
        let mean = u.history.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = u
            .history
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    };
    let mut x = vec![0.0; FEATURE_DIM];
    x[0] = u.phi;
    x[1] = if u.active { 1.0 } else { 0.0 };
    x[2] = mean / scale;
    x[3] = std / scale;
    x[4 + u.cohort.ordinal()] = 1.0;
    x[7] = (u.activation_credit / params.activation_threshold).min(1.0);
    x
}

/// A window of days sharing an engagement multiplier; `end_day` is exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftWindow {
    pub start_day: u32,
    pub end_day: u32,
    pub multiplier: f64,
}

/// Population-wide engagement and traffic drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSpec {
    pub schedule: Vec<DriftWindow>,
    /// Seven multipliers applied cyclically by day of week.
    pub weekly_pattern: Vec<f64>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            schedule: Vec::new(),
            weekly_pattern: vec![1.0; 7],
        }
    }
}

impl DriftSpec {
    /// Weekly pattern `1 + amplitude * sin(2 pi d / 7)`.
    pub fn weekly_sine(amplitude: f64) -> Self {
        Self {
            schedule: Vec::new(),
            weekly_pattern: (0..7)
                .map(|d| 1.0 + amplitude * (std::f64::consts::TAU * f64::from(d) / 7.0).sin())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weekly_pattern.len() != 7 {
            return Err(Error::contract(format!(
                "weekly_pattern needs 7 entries, got {}",
                self.weekly_pattern.len()
            )));
        }
        let all = self
            .weekly_pattern
            .iter()
            .chain(self.schedule.iter().map(|w| &w.multiplier));
        for &m in all {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::contract(format!("drift multiplier {m} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn multiplier(&self, day: u32) -> f64 {
        let weekly = self.weekly_pattern[(day % 7) as usize];
        self.schedule
            .iter()
            .filter(|w| (w.start_day..w.end_day).contains(&day))
            .fold(weekly, |m, w| m * w.multiplier)
    }
}

/// What happened to one user on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStep {
    pub user: u32,
    pub cohort: Cohort,
    /// Whether a scheduling decision was due; users without one get the
    /// lowest frequency.
    pub due: bool,
    pub action: FrequencyAction,
    pub metrics: [f64; NUM_METRICS],
    pub reward: f64,
    /// State and next-state features, when transitions are recorded.
    pub transition: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub outcome: DayOutcome,
    pub steps: Vec<UserStep>,
}

/// Volume and decision count of one batch of users stepped inside a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotOutcome {
    pub volume: u64,
    pub decisions: u64,
    /// Volume split by cohort, indexed by `Cohort::ordinal`.
    pub cohort_volume: [u64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    params: EnvParams,
    actions: ActionSet,
    users: Vec<UserState>,
}

/// Builds a population from `params`.
///
/// `theta` is uniform on [0, 1]; cohorts are theta terciles by rank (top third
/// High); each user independently starts dormant with `dormant_fraction`.
pub fn init_population(params: &EnvParams, actions: &ActionSet) -> Result<Population> {
    params.validate()?;
    let n = params.population_size;
    let mut rng = substream(params.seed, Stream::Population, &[]);
    let draws: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let theta = rng.random::<f64>();
            let dormant = rng.random::<f64>() < params.dormant_fraction;
            (theta, dormant)
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| draws[a].0.total_cmp(&draws[b].0).then(a.cmp(&b)));
    let mut cohorts = vec![Cohort::Low; n];
    for (rank, &i) in order.iter().enumerate() {
        cohorts[i] = match rank * 3 / n {
            0 => Cohort::Low,
            1 => Cohort::Medium,
            _ => Cohort::High,
        };
    }

    let users = draws
        .iter()
        .zip(cohorts)
        .enumerate()
        .map(|(i, (&(theta, dormant), cohort))| UserState::new(i as u32, theta, cohort, !dormant))
        .collect();
    Ok(Population {
        params: params.clone(),
        actions: actions.clone(),
        users,
    })
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format_version: u32,
    params: EnvParams,
    actions: ActionSet,
}

impl Population {
    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn features(&self, u: &UserState) -> Vec<f64> {
        features(u, &self.params, self.actions.max_value())
    }

    /// Starts a day whose users can then be stepped in batches, e.g. to let a
    /// controller act between batches.
    pub fn begin_day<'a>(
        &'a mut self,
        drift: &DriftSpec,
        reward: &'a RewardParams,
        day: u32,
        record: bool,
    ) -> Result<DayRun<'a>> {
        drift.validate()?;
        reward.validate()?;
        if reward.metric_weights.len() != NUM_METRICS {
            return Err(Error::contract(format!(
                "environment emits {NUM_METRICS} metrics but reward has {} weights",
                reward.metric_weights.len()
            )));
        }
        let multiplier = drift.multiplier(day);
        let outcome = DayOutcome::new(day, self.actions.len(), NUM_METRICS);
        Ok(DayRun {
            steps: Vec::with_capacity(self.users.len()),
            pop: self,
            reward,
            day,
            multiplier,
            record,
            outcome,
            cursor: 0,
        })
    }

    /// Runs one day: every due user gets the action index returned by
    /// `decide`, and every user is stepped.
    pub fn run_day(
        &mut self,
        decide: impl FnMut(&UserState, &[f64]) -> usize,
        drift: &DriftSpec,
        reward: &RewardParams,
        day: u32,
        record: bool,
    ) -> Result<DayResult> {
        let mut run = self.begin_day(drift, reward, day, record)?;
        let n = run.remaining();
        run.step_users(n, decide)?;
        run.finish()
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = SnapshotHeader {
            format_version: 1,
            params: self.params.clone(),
            actions: self.actions.clone(),
        };
        write_line(&mut out, path, &header)?;
        for u in &self.users {
            write_line(&mut out, path, u)?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::contract(format!("{}: empty snapshot", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: SnapshotHeader =
            serde_json::from_str(&first).map_err(|e| Error::json(path, e))?;
        let mut users = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                users.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
            }
        }
        Ok(Self {
            params: header.params,
            actions: header.actions,
            users,
        })
    }
}

fn write_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::json(path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// A day in progress; users are stepped in population order.
pub struct DayRun<'a> {
    pop: &'a mut Population,
    reward: &'a RewardParams,
    day: u32,
    multiplier: f64,
    record: bool,
    outcome: DayOutcome,
    steps: Vec<UserStep>,
    cursor: usize,
}

impl DayRun<'_> {
    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn remaining(&self) -> usize {
        self.pop.users.len() - self.cursor
    }

    /// Steps the next `count` users (fewer if the day runs out).
    pub fn step_users(
        &mut self,
        count: usize,
        mut decide: impl FnMut(&UserState, &[f64]) -> usize,
    ) -> Result<SlotOutcome> {
        let end = (self.cursor + count).min(self.pop.users.len());
        let params = &self.pop.params;
        let actions = &self.pop.actions;
        let f_max = actions.max_value();
        let due_prob = (params.due_prob * self.multiplier).min(1.0);
        let mut slot = SlotOutcome::default();

        for user in &mut self.pop.users[self.cursor..end] {
            let mut rng = substream(
                params.seed,
                Stream::Dynamics,
                &[u64::from(user.id), u64::from(self.day)],
            );
            let due = rng.random::<f64>() < due_prob;
            let state_features = features(user, params, f_max);
            let action = if due {
                let index = decide(user, &state_features);
                actions.get(index).ok_or_else(|| {
                    Error::contract(format!(
                        "decision {index} out of range for {} actions",
                        actions.len()
                    ))
                })?
            } else {
                actions.action(0)
            };

            let (next, metrics) =
                advance(user, action.value, params, f_max, self.multiplier, &mut rng);
            let r = reward(&metrics, self.reward, action)?;
            let transition = self
                .record
                .then(|| (state_features, features(&next, params, f_max)));

            self.outcome.delivery_volume += u64::from(action.value);
            for (total, m) in self.outcome.metric_totals.iter_mut().zip(metrics) {
                *total += m;
            }
            if due {
                self.outcome.frequency_histogram[action.index] += 1;
                slot.decisions += 1;
            }
            slot.volume += u64::from(action.value);
            slot.cohort_volume[user.cohort.ordinal()] += u64::from(action.value);
            self.steps.push(UserStep {
                user: user.id,
                cohort: user.cohort,
                due,
                action,
                metrics,
                reward: r,
                transition,
            });
            *user = next;
        }
        self.cursor = end;
        Ok(slot)
    }

    pub fn finish(self) -> Result<DayResult> {
        if self.remaining() != 0 {
            return Err(Error::contract(format!(
                "day {} finished with {} users not stepped",
                self.day,
                self.remaining()
            )));
        }
        Ok(DayResult {
            outcome: self.outcome,
            steps: self.steps,
        })
    }
}
