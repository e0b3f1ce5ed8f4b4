//! Mapping Q-value vectors to frequencies.
//!
//! Action indices follow the ascending order of the action set, so "smallest
//! index" below means "lowest frequency".

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Cohort;
use crate::{Error, Result};

/// Slack on the Effective-Factor threshold so rounding never excludes the argmax.
pub const EF_SLACK: f64 = 1e-12;

/// Effective-Factor settings: a global value and optional per-cohort overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfConfig {
    pub ef: f64,
    pub per_cohort: BTreeMap<Cohort, f64>,
}

impl Default for EfConfig {
    fn default() -> Self {
        Self {
            ef: 1.0,
            per_cohort: BTreeMap::new(),
        }
    }
}

impl EfConfig {
    pub fn global(ef: f64) -> Self {
        Self {
            ef: clamp_ef(ef),
            per_cohort: BTreeMap::new(),
        }
    }

    /// Per-cohort override if present, else the global value; always in [0, 1].
    pub fn resolve(&self, cohort: Cohort) -> f64 {
        clamp_ef(self.per_cohort.get(&cohort).copied().unwrap_or(self.ef))
    }

    /// Clamps every stored value into [0, 1].
    pub fn clamped(mut self) -> Self {
        self.ef = clamp_ef(self.ef);
        for v in self.per_cohort.values_mut() {
            *v = clamp_ef(*v);
        }
        self
    }
}

fn clamp_ef(ef: f64) -> f64 {
    if ef.is_nan() {
        warn!("EF is NaN; using 1.0");
        return 1.0;
    }
    if !(0.0..=1.0).contains(&ef) {
        warn!("EF {ef} outside [0, 1]; clamping");
    }
    ef.clamp(0.0, 1.0)
}

/// Index of the largest Q-value, lowest index on ties.
pub fn greedy(qvals: &[f64]) -> Result<usize> {
    let (first, rest) = qvals
        .split_first()
        .ok_or_else(|| Error::contract("greedy selection over an empty Q-vector"))?;
    let mut best = (0, *first);
    for (i, &q) in rest.iter().enumerate() {
        if q > best.1 {
            best = (i + 1, q);
        }
    }
    Ok(best.0)
}

/// Spread `max - min` of the Q-values.
pub fn delta_q(qvals: &[f64]) -> f64 {
    let (lo, hi) = min_max(qvals);
    if qvals.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn min_max(qvals: &[f64]) -> (f64, f64) {
    qvals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| {
            (lo.min(q), hi.max(q))
        })
}

/// Lowest-frequency action whose Q-value reaches `min + ef * delta_q`.
///
/// `ef = 1` recovers the greedy choice and `ef = 0` the lowest frequency;
/// raising `ef` never lowers the selected frequency. Out-of-range `ef` is
/// clamped with a warning.
pub fn ef_select(qvals: &[f64], ef: f64) -> Result<usize> {
    if qvals.len() < 3 {
        return Err(Error::contract(format!(
            "Effective-Factor selection needs at least 3 actions, got {}",
            qvals.len()
        )));
    }
    let ef = clamp_ef(ef);
    let (lo, hi) = min_max(qvals);
    let threshold = lo + ef * (hi - lo);
    qvals
        .iter()
        .position(|&q| q >= threshold - EF_SLACK)
        .ok_or_else(|| {
            Error::contract(format!(
                "no action reaches threshold {threshold}; Q-values not finite?"
            ))
        })
}

/// Uniform-random action with probability `explore_prob`, otherwise greedy.
pub fn explore<R: Rng + ?Sized>(qvals: &[f64], explore_prob: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&explore_prob) {
        return Err(Error::contract(format!(
            "explore_prob must be in [0, 1], got {explore_prob}"
        )));
    }
    if qvals.is_empty() {
        return Err(Error::contract("exploration over an empty Q-vector"));
    }
    if rng.random::<f64>() < explore_prob {
        Ok(rng.random_range(0..qvals.len()))
    } else {
        greedy(qvals)
    }
}
