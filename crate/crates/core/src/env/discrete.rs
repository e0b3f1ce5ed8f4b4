//! Small explicit MDP distilled from the user dynamics: an always-active user
//! of fixed `theta` whose only state is a fatigue bucket.

use crate::domain::{reward, ActionSet, RewardParams};
use crate::learner::tabular::FiniteMdp;
use crate::Result;

use super::{engagement, EnvParams};

#[derive(Debug, Clone, PartialEq)]
pub struct FatigueChain {
    pub mdp: FiniteMdp,
    /// Fatigue value each bucket stands for.
    pub centers: Vec<f64>,
}

/// Discretizes fatigue into `buckets` equal-width bins.
///
/// Each state is evaluated at its bin center. The deterministic next fatigue
/// is split between the two nearest centers by linear interpolation, so the
/// expected next fatigue is preserved inside the grid.
pub fn fatigue_chain_mdp(
    params: &EnvParams,
    actions: &ActionSet,
    reward_params: &RewardParams,
    theta: f64,
    buckets: usize,
) -> Result<FatigueChain> {
    params.validate()?;
    let f_max = actions.max_value();
    let centers: Vec<f64> = (0..buckets)
        .map(|b| (b as f64 + 0.5) / buckets as f64)
        .collect();

    let mut transitions = Vec::with_capacity(buckets);
    let mut rewards = Vec::with_capacity(buckets);
    for &phi in &centers {
        let mut rows = Vec::with_capacity(actions.len());
        let mut rs = Vec::with_capacity(actions.len());
        for action in actions.iter() {
            let metrics = engagement(theta, phi, action.value, params.lambda, f_max, 1.0);
            rs.push(reward(&metrics, reward_params, action)?);
            let next = (params.rho * phi
                + params.kappa * f64::from(action.value) / f64::from(f_max))
            .clamp(0.0, 1.0);
            rows.push(interpolate(&centers, next));
        }
        transitions.push(rows);
        rewards.push(rs);
    }
    Ok(FatigueChain {
        mdp: FiniteMdp::new(transitions, rewards)?,
        centers,
    })
}

fn interpolate(centers: &[f64], x: f64) -> Vec<f64> {
    let n = centers.len();
    let mut row = vec![0.0; n];
    if x <= centers[0] {
        row[0] = 1.0;
    } else if x >= centers[n - 1] {
        row[n - 1] = 1.0;
    } else {
        let j = centers.iter().rposition(|&c| c <= x).unwrap_or(0);
        let w = (x - centers[j]) / (centers[j + 1] - centers[j]);
        row[j] = 1.0 - w;
        row[j + 1] = w;
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_preserves_mean_inside_grid() {
        let centers = [0.125, 0.375, 0.625, 0.875];
        for x in [0.2, 0.375, 0.5, 0.8] {
            let row = interpolate(&centers, x);
            let mean: f64 = row.iter().zip(centers).map(|(p, c)| p * c).sum();
            assert!((mean - x).abs() < 1e-12);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(interpolate(&centers, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(interpolate(&centers, 1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn chain_shape_and_rewards() {
        let chain = fatigue_chain_mdp(
            &EnvParams::default(),
            &ActionSet::default(),
            &RewardParams::default(),
            0.6,
            4,
        )
        .unwrap();
        assert_eq!(chain.mdp.n_states(), 4);
        assert_eq!(chain.mdp.n_actions(), 6);
        // Sending nothing earns nothing and lets fatigue decay.
        for s in 0..4 {
            assert_eq!(chain.mdp.reward(s, 0), 0.0);
        }
        assert_eq!(chain.mdp.transition_row(0, 0), &[1.0, 0.0, 0.0, 0.0]);
        // More fatigue, less reward at the same frequency.
        assert!(chain.mdp.reward(0, 3) > chain.mdp.reward(3, 3));
    }
}
