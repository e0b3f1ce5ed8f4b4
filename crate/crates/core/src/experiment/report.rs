use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Cohort;
use crate::json::{read_json, write_json};
use crate::{Error, Result};

use super::evaluate::{EfStats, EvaluationReport};
use super::stats::{paired_wins, sign_test_p};
use super::{create_dir, write_text, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTotals {
    pub mode: Mode,
    pub volume: u64,
    pub metrics: f64,
    pub efficiency_ratio: Option<f64>,
}

/// Primary mode against one baseline, pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub baseline: ModeTotals,
    /// Relative change of the primary over the baseline.
    pub volume_delta: Option<f64>,
    pub metrics_delta: Option<f64>,
    pub efficiency_delta: Option<f64>,
    /// Seeds whose primary efficiency ratio beats the baseline's.
    pub efficiency_wins: u64,
    pub seeds_compared: u64,
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub primary: ModeTotals,
    pub baselines: Vec<BaselineComparison>,
    pub mean_constant_frequency_fraction: f64,
    /// EF distribution pooled over the primary runs' controller settings.
    pub ef_stats: Option<EfStats>,
    pub mean_q_gap: Option<f64>,
}

fn rel(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b)
}

fn rel_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    rel(a?, b?)
}

fn totals(mode: Mode, runs: &[&EvaluationReport]) -> ModeTotals {
    let volume = runs.iter().map(|r| r.total_volume).sum();
    let metrics = runs.iter().map(|r| r.total_metrics).sum();
    ModeTotals {
        mode,
        volume,
        metrics,
        efficiency_ratio: (volume > 0).then(|| metrics / volume as f64),
    }
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(run_dir, e))?;
        let name = entry.file_name();
        if let Some(seed) = name
            .to_str()
            .and_then(|n| n.strip_prefix("seed-"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if entry.path().is_dir() {
                dirs.push((seed, entry.path()));
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Evaluation reports of every mode found in a seed directory.
fn load_reports(dir: &Path) -> Result<BTreeMap<Mode, EvaluationReport>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("eval-") && name.ends_with(".json") {
            paths.push(path);
        }
    }
    paths.sort();
    for path in paths {
        let r: EvaluationReport = read_json(&path)?;
        out.insert(r.mode, r);
    }
    Ok(out)
}

/// Aggregates the evaluation reports under `run_dir` into `out_dir`.
///
/// `primary` must have a report in every `seed-<n>` directory. Every other
/// mode present in all seed directories is treated as a baseline.
pub fn report(run_dir: &Path, out_dir: &Path, primary: Mode) -> Result<Summary> {
    if !run_dir.is_dir() {
        return Err(Error::MissingInputs(vec![run_dir.to_path_buf()]));
    }
    let dirs = seed_dirs(run_dir)?;
    if dirs.is_empty() {
        return Err(Error::MissingInputs(vec![run_dir.join("seed-<n>")]));
    }
    let missing: Vec<PathBuf> = dirs
        .iter()
        .map(|(_, d)| d.join(primary.report_file()))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }

    let mut per_seed = Vec::with_capacity(dirs.len());
    for (seed, dir) in &dirs {
        per_seed.push((*seed, load_reports(dir)?));
    }
    let seeds: Vec<u64> = per_seed.iter().map(|(s, _)| *s).collect();
    let primary_runs: Vec<&EvaluationReport> = per_seed.iter().map(|(_, m)| &m[&primary]).collect();
    let baseline_modes: Vec<Mode> = per_seed[0]
        .1
        .keys()
        .copied()
        .filter(|&m| m != primary && per_seed.iter().all(|(_, r)| r.contains_key(&m)))
        .collect();

    create_dir(out_dir)?;
    write_timeseries(&out_dir.join("timeseries.csv"), &seeds, &primary_runs)?;
    write_freq_dist(&out_dir.join("freq_dist.csv"), &seeds, &primary_runs)?;
    write_user_std(
        &out_dir.join("per_user_freq_std.csv"),
        &seeds,
        &primary_runs,
    )?;

    let primary_totals = totals(primary, &primary_runs);
    let primary_eff: Vec<Option<f64>> = primary_runs.iter().map(|r| r.efficiency_ratio).collect();
    let mut baselines = Vec::new();
    let mut cohort_csv =
        String::from("baseline,cohort,volume_delta,metrics_delta,efficiency_delta\n");
    for &mode in &baseline_modes {
        let runs: Vec<&EvaluationReport> = per_seed.iter().map(|(_, m)| &m[&mode]).collect();
        let t = totals(mode, &runs);
        let eff: Vec<Option<f64>> = runs.iter().map(|r| r.efficiency_ratio).collect();
        let (wins, trials) = paired_wins(&primary_eff, &eff);
        baselines.push(BaselineComparison {
            volume_delta: rel(primary_totals.volume as f64, t.volume as f64),
            metrics_delta: rel(primary_totals.metrics, t.metrics),
            efficiency_delta: rel_opt(primary_totals.efficiency_ratio, t.efficiency_ratio),
            efficiency_wins: wins,
            seeds_compared: trials,
            sign_test_p: sign_test_p(wins, trials),
            baseline: t,
        });

        for cohort in Cohort::ALL {
            let pooled = |rs: &[&EvaluationReport]| {
                rs.iter().fold((0u64, 0.0), |(v, m), r| {
                    let c = &r.cohorts[cohort.ordinal()];
                    (v + c.volume, m + c.weighted_metrics)
                })
            };
            let (pv, pm) = pooled(&primary_runs);
            let (bv, bm) = pooled(&runs);
            let eff = |m: f64, v: u64| (v > 0).then(|| m / v as f64);
            writeln!(
                cohort_csv,
                "{mode},{cohort},{},{},{}",
                fmt_opt(rel(pv as f64, bv as f64)),
                fmt_opt(rel(pm, bm)),
                fmt_opt(rel_opt(eff(pm, pv), eff(bm, bv))),
            )
            .expect("writing to a String");
        }
    }
    write_text(&out_dir.join("cohorts.csv"), &cohort_csv)?;

    let mut ef_values = Vec::new();
    for (_, dir) in &dirs {
        let path = dir.join(primary.controller_file());
        if path.exists() {
            ef_values.extend(read_controller_ef(&path)?);
        }
    }
    let gaps: Vec<f64> = primary_runs.iter().filter_map(|r| r.mean_q_gap).collect();
    let summary = Summary {
        seeds,
        primary: primary_totals,
        baselines,
        mean_constant_frequency_fraction: primary_runs
            .iter()
            .map(|r| r.constant_frequency_fraction)
            .sum::<f64>()
            / primary_runs.len() as f64,
        ef_stats: EfStats::from_values(&ef_values),
        mean_q_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
    };
    write_json(out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_timeseries(path: &Path, seeds: &[u64], runs: &[&EvaluationReport]) -> Result<()> {
    let mut out = String::from("seed,day,volume,metric1,metric2\n");
    for (seed, r) in seeds.iter().zip(runs) {
        for d in &r.days {
            let m = |i: usize| d.metric_totals.get(i).copied().unwrap_or(0.0);
            writeln!(out, "{seed},{},{},{},{}", d.day, d.volume, m(0), m(1))
                .expect("writing to a String");
        }
    }
    write_text(path, &out)
}

fn write_freq_dist(path: &Path, seeds: &[u64], runs: &[&EvaluationReport]) -> Result<()> {
    let width = runs
        .iter()
        .flat_map(|r| r.days.iter().map(|d| d.frequency_histogram.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::from("seed,day");
    for i in 0..width {
        write!(out, ",action_{i}").expect("writing to a String");
    }
    out.push('\n');
    for (seed, r) in seeds.iter().zip(runs) {
        for d in &r.days {
            write!(out, "{seed},{}", d.day).expect("writing to a String");
            for c in &d.frequency_histogram {
                write!(out, ",{c}").expect("writing to a String");
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

fn write_user_std(path: &Path, seeds: &[u64], runs: &[&EvaluationReport]) -> Result<()> {
    let mut out = String::from("seed,user_id,std\n");
    for (seed, r) in seeds.iter().zip(runs) {
        for (user, s) in r.per_user_freq_std.iter().enumerate() {
            writeln!(out, "{seed},{user},{s}").expect("writing to a String");
        }
    }
    write_text(path, &out)
}

fn read_controller_ef(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::contract(format!("{}: malformed row {l:?}", path.display())))
        })
        .collect()
}
