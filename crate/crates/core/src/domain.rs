//! Shared domain types: frequency actions, the reward function, user cohorts
//! and per-day aggregates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One selectable delivery frequency: its position in the action set and the
/// number of deliveries per day it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrequencyAction {
    pub index: usize,
    pub value: u32,
}

/// Ordered set of delivery frequencies.
///
/// Values are strictly increasing and there are at least three of them; with
/// only two actions the Effective-Factor rule degenerates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct ActionSet {
    values: Vec<u32>,
}

impl ActionSet {
    pub const MIN_ACTIONS: usize = 3;

    pub fn new(values: Vec<u32>) -> Result<Self> {
        if values.len() < Self::MIN_ACTIONS {
            return Err(Error::contract(format!(
                "action set needs at least {} frequencies, got {}",
                Self::MIN_ACTIONS,
                values.len()
            )));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(format!(
                "action values must be strictly increasing: {values:?}"
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<FrequencyAction> {
        self.values
            .get(index)
            .map(|&value| FrequencyAction { index, value })
    }

    /// Like [`get`](Self::get) but for indices already known to be in range.
    pub fn action(&self, index: usize) -> FrequencyAction {
        FrequencyAction {
            index,
            value: self.values[index],
        }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn max_value(&self) -> u32 {
        *self.values.last().expect("action set is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = FrequencyAction> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(index, &value)| FrequencyAction { index, value })
    }
}

impl Default for ActionSet {
    /// Six frequencies, 0 through 5 deliveries per day.
    fn default() -> Self {
        Self {
            values: (0..=5).collect(),
        }
    }
}

impl TryFrom<Vec<u32>> for ActionSet {
    type Error = Error;

    fn try_from(values: Vec<u32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ActionSet> for Vec<u32> {
    fn from(set: ActionSet) -> Self {
        set.values
    }
}

/// Weights of the linear reward `dot(metric_weights, metrics) - epsilon * f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Penalty per delivery.
    pub epsilon: f64,
    /// One weight per component daily metric.
    pub metric_weights: Vec<f64>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            metric_weights: vec![1.0, 1.0],
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::contract(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.metric_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::contract(format!(
                "metric weights must be non-negative: {:?}",
                self.metric_weights
            )));
        }
        Ok(())
    }

    /// Weighted daily metric, without the delivery penalty.
    pub fn weighted_metric(&self, components: &[f64]) -> Result<f64> {
        if components.len() != self.metric_weights.len() {
            return Err(Error::contract(format!(
                "{} metric components but {} weights",
                components.len(),
                self.metric_weights.len()
            )));
        }
        Ok(self
            .metric_weights
            .iter()
            .zip(components)
            .map(|(w, c)| w * c)
            .sum())
    }
}

/// Per-step reward for delivering at frequency `f`.
pub fn reward(components: &[f64], params: &RewardParams, f: FrequencyAction) -> Result<f64> {
    Ok(params.weighted_metric(components)? - params.epsilon * f64::from(f.value))
}

/// Activity cohort of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    High,
    Medium,
    Low,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::High, Cohort::Medium, Cohort::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::High => "high",
            Cohort::Medium => "medium",
            Cohort::Low => "low",
        }
    }

    /// Position in [`Cohort::ALL`], also the one-hot slot in user features.
    pub fn ordinal(self) -> usize {
        match self {
            Cohort::High => 0,
            Cohort::Medium => 1,
            Cohort::Low => 2,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Aggregated results of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub day: u32,
    /// Sum over users of the delivered frequency value.
    pub delivery_volume: u64,
    /// One total per component daily metric.
    pub metric_totals: Vec<f64>,
    /// Scheduling decisions per action index.
    pub frequency_histogram: Vec<u64>,
}

impl DayOutcome {
    pub fn new(day: u32, num_actions: usize, num_metrics: usize) -> Self {
        Self {
            day,
            delivery_volume: 0,
            metric_totals: vec![0.0; num_metrics],
            frequency_histogram: vec![0; num_actions],
        }
    }

    pub fn decisions(&self) -> u64 {
        self.frequency_histogram.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq(value: u32) -> FrequencyAction {
        FrequencyAction { index: 0, value }
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams {
            epsilon: 0.005,
            metric_weights: vec![1.0, 1.0],
        };
        assert!((reward(&[1.0, 0.0], &p, freq(2)).unwrap() - 0.99).abs() < 1e-12);

        let p = RewardParams {
            epsilon: 0.01,
            metric_weights: vec![3.0, 7.0],
        };
        assert_eq!(reward(&[0.0, 0.0], &p, freq(0)).unwrap(), 0.0);

        let p = RewardParams {
            epsilon: 0.1,
            metric_weights: vec![0.5, 0.25],
        };
        assert!((reward(&[2.0, 4.0], &p, freq(5)).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn reward_rejects_length_mismatch() {
        let p = RewardParams::default();
        assert!(matches!(
            reward(&[1.0], &p, freq(1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn action_set_validation() {
        assert!(ActionSet::new(vec![0, 1]).is_err());
        assert!(ActionSet::new(vec![0, 2, 2]).is_err());
        assert!(ActionSet::new(vec![3, 1, 2]).is_err());
        let set = ActionSet::default();
        assert_eq!(set.len(), 6);
        assert_eq!(set.max_value(), 5);
        assert_eq!(set.get(6), None);
        assert_eq!(set.get(2), Some(FrequencyAction { index: 2, value: 2 }));
    }

    #[test]
    fn action_set_deserialization_validates() {
        let ok: ActionSet = serde_json::from_str("[0, 1, 3]").unwrap();
        assert_eq!(ok.values(), &[0, 1, 3]);
        assert!(serde_json::from_str::<ActionSet>("[1, 0, 3]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reward_decreases_in_frequency(
                c1 in 0.0..10.0f64, c2 in 0.0..10.0f64,
                eps in 1e-6..1.0f64, v in 0u32..20,
            ) {
                let p = RewardParams { epsilon: eps, metric_weights: vec![1.0, 0.5] };
                let lo = reward(&[c1, c2], &p, freq(v)).unwrap();
                let hi = reward(&[c1, c2], &p, freq(v + 1)).unwrap();
                prop_assert!(hi < lo);
            }

            #[test]
            fn reward_is_linear_in_components(
                c1 in -5.0..5.0f64, c2 in -5.0..5.0f64, a in -4.0..4.0f64,
                w1 in 0.0..3.0f64, w2 in 0.0..3.0f64, v in 0u32..6,
            ) {
                let p = RewardParams { epsilon: 0.05, metric_weights: vec![w1, w2] };
                let zero = reward(&[0.0, 0.0], &p, freq(v)).unwrap();
                let scaled = reward(&[a * c1, a * c2], &p, freq(v)).unwrap() - zero;
                let base = reward(&[c1, c2], &p, freq(v)).unwrap() - zero;
                prop_assert!((scaled - a * base).abs() < 1e-9);
            }
        }
    }
}
