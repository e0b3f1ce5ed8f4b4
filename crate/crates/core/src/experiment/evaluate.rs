use serde::{Deserialize, Serialize};

use crate::domain::Cohort;
use crate::env::{init_population, NUM_METRICS};
use crate::learner::QNetwork;
use crate::policy::{ef_select, greedy};
use crate::volume::{ControlRow, VolumeController};
use crate::{Error, Result};

use super::{ExperimentConfig, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: u32,
    pub multiplier: f64,
    pub volume: u64,
    pub metric_totals: Vec<f64>,
    /// Metric totals combined with the reward weights.
    pub weighted_metrics: f64,
    pub decisions: u64,
    /// Due decisions per action index.
    pub frequency_histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort: Cohort,
    pub users: usize,
    pub volume: u64,
    pub weighted_metrics: f64,
    pub efficiency_ratio: Option<f64>,
    pub total_reward: f64,
}

/// Quantiles of the EF values a controller set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfStats {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl EfStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            min: v[0],
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: Mode,
    pub seed: u64,
    pub population: usize,
    pub horizon_days: u32,
    pub target_volume: Option<f64>,
    pub total_volume: u64,
    pub metric_totals: Vec<f64>,
    pub total_metrics: f64,
    /// `total_metrics / total_volume`; absent when nothing was delivered.
    pub efficiency_ratio: Option<f64>,
    pub total_reward: f64,
    /// Sum over users of the mean, over start days, of the discounted return
    /// to the end of the horizon.
    pub accumulated_reward: f64,
    pub gamma: f64,
    pub cohorts: Vec<CohortSummary>,
    pub days: Vec<DaySummary>,
    /// Per user, standard deviation of the frequencies of due decisions.
    pub per_user_freq_std: Vec<f64>,
    /// Share of users with at least one decision that always got the same frequency.
    pub constant_frequency_fraction: f64,
    pub ef_stats: Option<EfStats>,
    /// Mean `Q(s, greedy) - Q(s, chosen)` over due decisions.
    pub mean_q_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvaluationReport,
    /// Controller rows in tick order (all controllers interleaved).
    pub trace: Vec<ControlRow>,
}

/// Runs `horizon_days` over a fresh evaluation population.
///
/// Each day is split into `ticks_per_day` equal slots of users. In `ef_pid`
/// mode the controllers observe every slot's volume, rescaled to a daily
/// rate, and the new EF applies from the next slot on.
pub fn evaluate(
    cfg: &ExperimentConfig,
    seed: u64,
    mode: Mode,
    net: Option<&QNetwork>,
) -> Result<EvalRun> {
    cfg.validate()?;
    let fixed_index = match mode {
        Mode::FixedFrequency(k) => Some(
            cfg.actions
                .values()
                .iter()
                .position(|&v| v == k)
                .ok_or_else(|| {
                    Error::contract(format!("frequency {k} is not in the action set"))
                })?,
        ),
        _ => None,
    };
    if mode.needs_network() {
        let net = net.ok_or_else(|| Error::contract(format!("mode {mode} needs a Q-network")))?;
        if net.num_actions() != cfg.actions.len() {
            return Err(Error::contract(format!(
                "network has {} actions, config has {}",
                net.num_actions(),
                cfg.actions.len()
            )));
        }
    }

    let env = cfg.evaluation_env(seed);
    let mut pop = init_population(&env, &cfg.actions)?;
    let n = pop.len();
    let days = cfg.horizon_days as usize;
    let ticks = cfg.ticks_per_day;

    let mut controllers = Vec::new();
    if mode == Mode::EfPid {
        match &cfg.cohort_targets {
            Some(targets) => {
                for (&cohort, &t) in targets {
                    let start = cfg.ef.resolve(cohort);
                    controllers.push(VolumeController::for_cohort(
                        cfg.pid.clone(),
                        cohort,
                        t,
                        start,
                    )?);
                }
            }
            None => controllers.push(VolumeController::new(
                cfg.pid.clone(),
                cfg.target_volume,
                cfg.ef.ef,
            )?),
        }
    }
    let mut ef_cfg = cfg.ef.clone().clamped();

    let mut rewards = vec![0.0; n * days];
    let mut chosen: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut gap = (0.0, 0u64);
    let mut day_rows = Vec::with_capacity(days);
    let mut trace = Vec::new();
    let mut cohorts: Vec<CohortSummary> = Cohort::ALL
        .iter()
        .map(|&cohort| CohortSummary {
            cohort,
            users: pop.users().iter().filter(|u| u.cohort == cohort).count(),
            volume: 0,
            weighted_metrics: 0.0,
            efficiency_ratio: None,
            total_reward: 0.0,
        })
        .collect();

    for day in 0..cfg.horizon_days {
        let mut run = pop.begin_day(&cfg.drift, &cfg.reward, day, false)?;
        let mut failure: Option<Error> = None;
        for t in 0..ticks {
            let slot_users = (t + 1) * n / ticks - t * n / ticks;
            // Consistent EF snapshot for the whole slot.
            let snapshot = ef_cfg.clone();
            let slot = run.step_users(slot_users, |u, x| {
                if let Some(i) = fixed_index {
                    return i;
                }
                let q = match net.expect("checked above").forward(x) {
                    Ok(q) => q,
                    Err(e) => {
                        failure.get_or_insert(e);
                        return 0;
                    }
                };
                let best = greedy(&q).unwrap_or(0);
                let pick = match mode {
                    Mode::Greedy => Ok(best),
                    _ => ef_select(&q, snapshot.resolve(u.cohort)),
                };
                match pick {
                    Ok(i) => {
                        gap.0 += q[best] - q[i];
                        gap.1 += 1;
                        i
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        0
                    }
                }
            })?;
            if let Some(e) = failure.take() {
                return Err(e);
            }
            let tick = (day as usize * ticks + t) as u64;
            let scale = n as f64 / slot_users.max(1) as f64;
            for ctl in &mut controllers {
                let volume = match ctl.cohort() {
                    Some(c) => slot.cohort_volume[c.ordinal()],
                    None => slot.volume,
                };
                let before = ctl.trace().len();
                ctl.observe(tick, volume as f64 * scale, &mut ef_cfg)?;
                trace.extend_from_slice(&ctl.trace()[before..]);
            }
        }
        let result = run.finish()?;

        for s in &result.steps {
            let u = s.user as usize;
            rewards[u * days + day as usize] = s.reward;
            if s.due {
                chosen[u].push(s.action.value);
            }
            let c = &mut cohorts[s.cohort.ordinal()];
            c.volume += u64::from(s.action.value);
            c.weighted_metrics += cfg.reward.weighted_metric(&s.metrics)?;
            c.total_reward += s.reward;
        }
        let out = result.outcome;
        day_rows.push(DaySummary {
            day,
            multiplier: cfg.drift.multiplier(day),
            volume: out.delivery_volume,
            weighted_metrics: cfg.reward.weighted_metric(&out.metric_totals)?,
            metric_totals: out.metric_totals.clone(),
            decisions: out.decisions(),
            frequency_histogram: out.frequency_histogram,
        });
    }

    let gamma = cfg.hyper.gamma;
    let mut accumulated_reward = 0.0;
    let mut total_reward = 0.0;
    for user_rewards in rewards.chunks(days) {
        accumulated_reward += mean_discounted_return(user_rewards, gamma);
        total_reward += user_rewards.iter().sum::<f64>();
    }

    let per_user_freq_std: Vec<f64> = chosen.iter().map(|c| std_dev(c).unwrap_or(0.0)).collect();
    let deciders = chosen.iter().filter(|c| !c.is_empty()).count();
    let constant = chosen
        .iter()
        .filter(|c| !c.is_empty() && c.iter().all(|&v| v == c[0]))
        .count();

    let total_volume: u64 = day_rows.iter().map(|d| d.volume).sum();
    let mut metric_totals = vec![0.0; NUM_METRICS];
    let mut total_metrics = 0.0;
    for d in &day_rows {
        for (t, m) in metric_totals.iter_mut().zip(&d.metric_totals) {
            *t += m;
        }
        total_metrics += d.weighted_metrics;
    }
    for c in &mut cohorts {
        c.efficiency_ratio = ratio(c.weighted_metrics, c.volume);
    }
    let ef_values: Vec<f64> = trace.iter().map(|r| r.ef).collect();

    let report = EvaluationReport {
        mode,
        seed,
        population: n,
        horizon_days: cfg.horizon_days,
        target_volume: (mode == Mode::EfPid).then_some(cfg.target_volume),
        total_volume,
        metric_totals,
        total_metrics,
        efficiency_ratio: ratio(total_metrics, total_volume),
        total_reward,
        accumulated_reward,
        gamma,
        cohorts,
        days: day_rows,
        per_user_freq_std,
        constant_frequency_fraction: if deciders == 0 {
            0.0
        } else {
            constant as f64 / deciders as f64
        },
        ef_stats: EfStats::from_values(&ef_values),
        mean_q_gap: (gap.1 > 0 && mode != Mode::Greedy).then(|| gap.0 / gap.1 as f64),
    };
    Ok(EvalRun { report, trace })
}

fn ratio(metrics: f64, volume: u64) -> Option<f64> {
    (volume > 0).then(|| metrics / volume as f64)
}

/// Population standard deviation; `None` for an empty series.
fn std_dev(values: &[u32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    Some(var.sqrt())
}

/// Mean over start days of the discounted return truncated at the horizon.
fn mean_discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut total = 0.0;
    for &r in rewards.iter().rev() {
        g = r + gamma * g;
        total += g;
    }
    total / rewards.len() as f64
}
