//! Collect / train / evaluate / report pipeline over the synthetic population.
//!
//! A run directory holds one `seed-<n>` subdirectory per seed with the
//! episode log, checkpoint, loss curve and one evaluation report per mode;
//! [`report`] aggregates those into CSV and JSON artifacts.

mod collect;
mod evaluate;
mod report;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use collect::{collect, write_log};
pub use evaluate::{evaluate, CohortSummary, DaySummary, EfStats, EvalRun, EvaluationReport};
pub use report::{report, BaselineComparison, ModeTotals, Summary};

use crate::domain::{ActionSet, Cohort, RewardParams};
use crate::env::{DriftSpec, EnvParams};
use crate::episode::{read_log, EpisodeRecord};
use crate::json::{read_json, write_json};
use crate::learner::{train_from_log, Checkpoint, Hyperparams, QNetwork, TrainOutcome};
use crate::policy::EfConfig;
use crate::rng::{derive, Stream};
use crate::volume::{ControlRow, PidParams};
use crate::{Error, Result};

pub const LOG_FILE: &str = "episodes.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Evaluation environment; its `seed` is replaced per run seed.
    pub env: EnvParams,
    pub actions: ActionSet,
    pub reward: RewardParams,
    pub hyper: Hyperparams,
    /// EF used by `ef_fixed`, and the starting EF of `ef_pid`.
    pub ef: EfConfig,
    /// Daily delivery-volume target for `ef_pid`.
    pub target_volume: f64,
    /// Per-cohort daily targets; when set, each cohort gets its own loop.
    pub cohort_targets: Option<BTreeMap<Cohort, f64>>,
    pub pid: PidParams,
    pub drift: DriftSpec,
    /// Controller ticks per simulated day; users are stepped in this many
    /// equal slots.
    pub ticks_per_day: usize,
    pub horizon_days: u32,
    pub collection_days: u32,
    pub collection_population: usize,
    pub episode_length: u32,
    pub explore_prob: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvParams::default(),
            actions: ActionSet::default(),
            reward: RewardParams::default(),
            hyper: Hyperparams::default(),
            ef: EfConfig::default(),
            target_volume: 20_000.0,
            cohort_targets: None,
            pid: PidParams::default(),
            drift: DriftSpec::default(),
            ticks_per_day: 1,
            horizon_days: 30,
            collection_days: 30,
            collection_population: 5_000,
            episode_length: 30,
            explore_prob: 1.0,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.hyper.validate()?;
        self.pid.validate()?;
        self.drift.validate()?;
        if self.horizon_days == 0 {
            return Err(Error::contract("horizon_days must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("seeds must be non-empty"));
        }
        if self.ticks_per_day == 0 || self.ticks_per_day > self.env.population_size.max(1) {
            return Err(Error::contract(
                "ticks_per_day must be in [1, population_size]",
            ));
        }
        if self.episode_length == 0 {
            return Err(Error::contract("episode_length must be >= 1"));
        }
        if self.collection_population == 0 {
            return Err(Error::contract("collection_population must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.explore_prob) {
            return Err(Error::contract("explore_prob must be in [0, 1]"));
        }
        if !(self.target_volume > 0.0) {
            return Err(Error::contract("target_volume must be > 0"));
        }
        if let Some(targets) = &self.cohort_targets {
            if targets.is_empty() || targets.values().any(|&t| !(t > 0.0)) {
                return Err(Error::contract(
                    "cohort_targets must be non-empty and positive",
                ));
            }
        }
        Ok(())
    }

    /// Environment of the collection population for `seed`.
    pub fn collection_env(&self, seed: u64) -> EnvParams {
        EnvParams {
            population_size: self.collection_population,
            seed: derive(seed, &[Stream::Collection as u64]),
            ..self.env.clone()
        }
    }

    /// Environment of the evaluation population for `seed`.
    pub fn evaluation_env(&self, seed: u64) -> EnvParams {
        EnvParams {
            seed: derive(seed, &[Stream::Evaluation as u64]),
            ..self.env.clone()
        }
    }

    pub fn hyper_for(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            seed: derive(seed, &[Stream::Init as u64]),
            ..self.hyper.clone()
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        seed_dir(&self.output_dir, seed)
    }
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// How evaluation turns Q-values (or nothing) into frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    Greedy,
    EfFixed,
    EfPid,
    /// Every due user gets this frequency value.
    FixedFrequency(u32),
}

impl Mode {
    pub fn needs_network(self) -> bool {
        !matches!(self, Mode::FixedFrequency(_))
    }

    /// File-name friendly form, e.g. `fixed_frequency_3`.
    pub fn tag(self) -> String {
        self.to_string().replace(':', "_")
    }

    pub fn report_file(self) -> String {
        format!("eval-{}.json", self.tag())
    }

    pub fn controller_file(self) -> String {
        format!("controller-{}.csv", self.tag())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Greedy => f.write_str("greedy"),
            Mode::EfFixed => f.write_str("ef_fixed"),
            Mode::EfPid => f.write_str("ef_pid"),
            Mode::FixedFrequency(k) => write!(f, "fixed_frequency:{k}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Mode::Greedy),
            "ef_fixed" => Ok(Mode::EfFixed),
            "ef_pid" => Ok(Mode::EfPid),
            _ => {
                let k = s
                    .strip_prefix("fixed_frequency:")
                    .or_else(|| s.strip_prefix("fixed_frequency_"))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| {
                        Error::contract(format!(
                            "unknown mode {s:?}; expected greedy, ef_fixed, ef_pid or fixed_frequency:<k>"
                        ))
                    })?;
                Ok(Mode::FixedFrequency(k))
            }
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> Self {
        m.to_string()
    }
}

/// Trains on `log` with the seed-derived hyperparameters.
pub fn train(cfg: &ExperimentConfig, seed: u64, log: &[EpisodeRecord]) -> Result<TrainOutcome> {
    train_from_log(log, &cfg.hyper_for(seed), cfg.actions.len())
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    write_text(path, &out)
}

pub fn write_controller_csv(path: &Path, rows: &[ControlRow]) -> Result<()> {
    let mut out = String::from("tick,target,actual,error,ef\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.tick, r.target, r.actual, r.error, r.ef
        ));
    }
    write_text(path, &out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// File-backed steps of the pipeline for one seed, sharing the seed directory
/// layout.
pub fn collect_to_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let dir = cfg.seed_dir(seed);
    create_dir(&dir)?;
    let log = collect(cfg, seed, None)?;
    let path = dir.join(LOG_FILE);
    write_log(&path, &log)?;
    Ok(path)
}

pub fn train_to_dir(cfg: &ExperimentConfig, seed: u64, log_path: Option<&Path>) -> Result<PathBuf> {
    let dir = cfg.seed_dir(seed);
    create_dir(&dir)?;
    let log_path = log_path.map_or_else(|| dir.join(LOG_FILE), Path::to_path_buf);
    if !log_path.exists() {
        return Err(Error::MissingInputs(vec![log_path]));
    }
    let log = read_log(&log_path)?;
    let out = train(cfg, seed, &log)?;
    let path = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(&out.network, &cfg.hyper_for(seed)).save(&path)?;
    write_losses(&dir.join(LOSS_FILE), &out.losses)?;
    Ok(path)
}

pub fn load_network(path: &Path) -> Result<QNetwork> {
    if !path.exists() {
        return Err(Error::MissingInputs(vec![path.to_path_buf()]));
    }
    Checkpoint::load(path)?.network()
}

pub fn evaluate_to_dir(
    cfg: &ExperimentConfig,
    seed: u64,
    mode: Mode,
    checkpoint: Option<&Path>,
) -> Result<EvaluationReport> {
    let dir = cfg.seed_dir(seed);
    create_dir(&dir)?;
    let net = if mode.needs_network() {
        let path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
        Some(load_network(&path)?)
    } else {
        None
    };
    let run = evaluate(cfg, seed, mode, net.as_ref())?;
    write_json(dir.join(mode.report_file()), &run.report)?;
    if !run.trace.is_empty() {
        write_controller_csv(&dir.join(mode.controller_file()), &run.trace)?;
    }
    Ok(run.report)
}

/// Every fixed-frequency baseline of the action set.
pub fn baseline_modes(actions: &ActionSet) -> Vec<Mode> {
    actions
        .values()
        .iter()
        .map(|&k| Mode::FixedFrequency(k))
        .collect()
}

/// Collect, train and evaluate `modes` for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, modes: &[Mode]) -> Result<()> {
    collect_to_dir(cfg, seed)?;
    train_to_dir(cfg, seed, None)?;
    for &mode in modes {
        evaluate_to_dir(cfg, seed, mode, None)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trips_through_strings() {
        for m in [
            Mode::Greedy,
            Mode::EfFixed,
            Mode::EfPid,
            Mode::FixedFrequency(3),
        ] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
            assert_eq!(m.tag().parse::<Mode>().unwrap(), m);
        }
        assert_eq!(
            Mode::FixedFrequency(2).report_file(),
            "eval-fixed_frequency_2.json"
        );
        assert!("sometimes".parse::<Mode>().is_err());
        assert!("fixed_frequency:x".parse::<Mode>().is_err());
    }

    #[test]
    fn config_defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon_days, 30);
        assert_eq!(cfg.collection_population, 5_000);
        assert_eq!(cfg.env.population_size, 20_000);
        let bad = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            horizon_days: 0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_streams_differ_per_role() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.collection_env(1).seed, cfg.evaluation_env(1).seed);
        assert_ne!(cfg.evaluation_env(1).seed, cfg.evaluation_env(2).seed);
        assert_eq!(cfg.hyper_for(4), cfg.hyper_for(4));
    }
}
