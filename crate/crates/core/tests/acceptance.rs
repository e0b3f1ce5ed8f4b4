//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Criteria 6, 7, 8 and 10 share one 20-seed run of the canonical config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use freqctl::env::fatigue_chain_mdp;
use freqctl::experiment::{
    baseline_modes, report, run_seed, seed_dir, EvaluationReport, ExperimentConfig, Mode,
};
use freqctl::json::read_json;
use freqctl::learner::tabular::VisitCountQLearning;
use freqctl::learner::{
    gradient_check, train_from_log, value_iteration, FiniteMdp, Hyperparams, OptimizerKind,
    QNetwork, StateEncoding,
};
use freqctl::policy::{delta_q, ef_select, greedy, EF_SLACK};
use freqctl::volume::{pid_step, PidParams, PidState};

const TABULAR_GAMMA: f64 = 0.25;
const TABULAR_UPDATES: usize = 200_000;
const TABULAR_TOL: f64 = 1e-3;
const TABULAR_SWEEP: u64 = 40;
const TABULAR_BUDGET: Duration = Duration::from_secs(10);

const CHAIN_BUCKETS: usize = 4;
const CHAIN_THETA: f64 = 0.5;
const CHAIN_EPISODES: usize = 200;
const CHAIN_EPISODE_LEN: u32 = 1000;
const CHAIN_MATCH: f64 = 0.95;
const CHAIN_BUDGET: Duration = Duration::from_secs(300);

const GRAD_DRAWS: usize = 100;
const GRAD_EPS: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

const PROPERTY_CASES: usize = 10_000;
const WINDUP_TICKS: usize = 1000;

const VOLUME_BAND: f64 = 0.05;
const SETTLE_TICKS: usize = 15;
const OPEN_LOOP_MIN_DEVIATION: f64 = 0.10;
const SEED_BUDGET: Duration = Duration::from_secs(180);
const CANONICAL_SEEDS: u64 = 20;
const SIGN_TEST_ALPHA: f64 = 0.05;
const CANONICAL_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Line {
    id: u32,
    pass: bool,
    text: String,
}

fn line(id: u32, pass: bool, text: String) -> Line {
    let l = Line { id, pass, text };
    println!(
        "criterion {:>2} [{}] {}",
        l.id,
        if l.pass { "PASS" } else { "FAIL" },
        l.text
    );
    l
}

fn canonical_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.json");
    ExperimentConfig::load(&path).expect("canonical config loads")
}

fn tabular_error(seed: u64) -> f64 {
    let mdp = FiniteMdp::random(3, 3, seed);
    let exact = value_iteration(&mdp, TABULAR_GAMMA, 1e-13).unwrap();
    let mut learner = VisitCountQLearning::new(3, 3, TABULAR_GAMMA);
    learner.run_sampled(&mdp, TABULAR_UPDATES, seed).unwrap();
    learner.table.sup_distance(&exact)
}

fn tabular_oracle() -> Line {
    let start = Instant::now();
    let err = tabular_error(0);
    let took = start.elapsed();
    let sweep: Vec<f64> = (1..=TABULAR_SWEEP).map(tabular_error).collect();
    let within = sweep.iter().filter(|&&e| e < TABULAR_TOL).count();
    line(
        1,
        err < TABULAR_TOL && took < TABULAR_BUDGET,
        format!(
            "tabular Q-learning vs value iteration (seed 0): sup error {err:.2e} (< {TABULAR_TOL:e}), {:.2} s (< {} s); \
             other seeds within tolerance {within}/{TABULAR_SWEEP}",
            took.as_secs_f64(),
            TABULAR_BUDGET.as_secs()
        ),
    )
}

fn chain_policy_match(cfg: &ExperimentConfig) -> Line {
    let start = Instant::now();
    let chain = fatigue_chain_mdp(
        &cfg.env,
        &cfg.actions,
        &cfg.reward,
        CHAIN_THETA,
        CHAIN_BUCKETS,
    )
    .unwrap();
    let gamma = cfg.hyper.gamma;
    let exact = value_iteration(&chain.mdp, gamma, 1e-12).unwrap();
    let log = chain
        .mdp
        .sample_log(CHAIN_EPISODES, CHAIN_EPISODE_LEN, StateEncoding::OneHot, 1);
    let hp = Hyperparams {
        gamma,
        optimizer: OptimizerKind::Adam,
        alpha: 5e-5,
        batch_size: 256,
        training_steps: 100_000,
        seed: 1,
        ..cfg.hyper.clone()
    };
    let net = train_from_log(&log, &hp, cfg.actions.len())
        .unwrap()
        .network;
    let learned: Vec<usize> = (0..CHAIN_BUCKETS)
        .map(|s| {
            greedy(
                &net.forward(&chain.mdp.encode(s, StateEncoding::OneHot))
                    .unwrap(),
            )
            .unwrap()
        })
        .collect();
    let target = exact.greedy_policy();
    let matched = learned.iter().zip(&target).filter(|(a, b)| a == b).count();
    let share = matched as f64 / CHAIN_BUCKETS as f64;
    let took = start.elapsed();
    line(
        2,
        share >= CHAIN_MATCH && took < CHAIN_BUDGET,
        format!(
            "DQN on {CHAIN_BUCKETS}-bucket fatigue chain: greedy {learned:?} vs value iteration {target:?}, \
             {matched}/{CHAIN_BUCKETS} match (>= {:.0}%), {:.0} s (< {} s)",
            CHAIN_MATCH * 100.0,
            took.as_secs_f64(),
            CHAIN_BUDGET.as_secs()
        ),
    )
}

fn gradient_correctness() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for draw in 0..GRAD_DRAWS {
        let input = rng.random_range(1..=8);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=12)).collect();
        let actions = rng.random_range(3..=6);
        let net = QNetwork::new(input, &hidden, actions, draw as u64).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = rng.random_range(0..actions);
        let target = rng.random_range(-2.0..2.0);
        worst = worst.max(gradient_check(&net, &x, a, target, GRAD_EPS).unwrap());
    }
    line(
        3,
        worst < GRAD_TOL,
        format!(
            "max relative gradient error over {GRAD_DRAWS} draws: {worst:.2e} (< {GRAD_TOL:e})"
        ),
    )
}

fn first_max(q: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..q.len() {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}

fn ef_algebra() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut failures = 0usize;
    for _ in 0..PROPERTY_CASES {
        let k = rng.random_range(3..=12);
        let tied = rng.random_bool(0.5);
        let q: Vec<f64> = (0..k)
            .map(|_| {
                if tied {
                    f64::from(rng.random_range(0..4u8)) * 0.5
                } else {
                    rng.random_range(-10.0..10.0)
                }
            })
            .collect();
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let min = q.iter().copied().fold(f64::INFINITY, f64::min);
        let ok = ef_select(&q, lo).unwrap() <= ef_select(&q, hi).unwrap()
            && ef_select(&q, 0.0).unwrap() == 0
            && ef_select(&q, 1.0).unwrap() == first_max(&q)
            && [lo, hi]
                .iter()
                .all(|&ef| q[ef_select(&q, ef).unwrap()] >= min + ef * delta_q(&q) - EF_SLACK);
        failures += usize::from(!ok);
    }
    line(
        4,
        failures == 0,
        format!("EF selection properties over {PROPERTY_CASES} Q-vectors: {failures} failures"),
    )
}

fn pid_properties() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut sign_failures = 0usize;
    let mut checked = 0usize;
    for _ in 0..PROPERTY_CASES {
        let target = rng.random_range(1.0..1e6);
        let actual = target * rng.random_range(0.0..3.0);
        let p = PidParams {
            kp: rng.random_range(1e-3..1.0),
            ki: 0.0,
            kd: 0.0,
            ..PidParams::default()
        };
        let st = PidState::new(rng.random());
        let (_, ef) = pid_step(&st, &p, target, actual).unwrap();
        let raw = st.last_ef + p.kp * (target - actual) / target;
        if raw > 0.0 && raw < 1.0 {
            checked += 1;
            let want = (target - actual).partial_cmp(&0.0).unwrap();
            let got = (ef - st.last_ef).partial_cmp(&0.0).unwrap();
            sign_failures += usize::from(want != got);
        }
    }

    let mut range_failures = 0usize;
    for _ in 0..PROPERTY_CASES {
        let p = PidParams {
            kp: rng.random_range(0.0..2.0),
            ki: rng.random_range(0.0..1.0),
            kd: rng.random_range(0.0..1.0),
            integral_limit: rng.random_range(0.1..5.0),
            control_interval: 1,
        };
        let limit = p.integral_limit;
        let mut st = PidState {
            integral: rng.random_range(-limit..limit),
            last_error: rng.random_range(-3.0..3.0),
            last_ef: rng.random(),
        };
        for _ in 0..5 {
            let target = rng.random_range(1.0..1e4);
            let (next, ef) =
                pid_step(&st, &p, target, target * rng.random_range(0.0..4.0)).unwrap();
            range_failures +=
                usize::from(!(0.0..=1.0).contains(&ef) || next.integral.abs() > limit);
            st = next;
        }
    }

    let mut windup_failures = 0usize;
    let p = PidParams {
        kp: 0.2,
        ki: 0.05,
        kd: 0.01,
        integral_limit: 1.0,
        control_interval: 1,
    };
    for actual in [0.0, 1e4] {
        let mut st = PidState::new(0.5);
        for _ in 0..WINDUP_TICKS {
            let (next, ef) = pid_step(&st, &p, 100.0, actual).unwrap();
            windup_failures +=
                usize::from(next.integral.abs() > p.integral_limit || !(0.0..=1.0).contains(&ef));
            st = next;
        }
    }
    line(
        5,
        sign_failures == 0 && range_failures == 0 && windup_failures == 0,
        format!(
            "PID: sign failures {sign_failures}/{checked} unclamped pairs, EF/integral range failures {range_failures}, \
             anti-windup failures {windup_failures} over {WINDUP_TICKS}-tick saturation"
        ),
    )
}

struct CanonicalRun {
    reports: Vec<BTreeMap<Mode, EvaluationReport>>,
    seed_times: Vec<Duration>,
    total: Duration,
    run_dir: PathBuf,
    cfg: ExperimentConfig,
}

fn canonical_run(cfg: &ExperimentConfig, dir: &Path) -> CanonicalRun {
    let cfg = ExperimentConfig {
        seeds: (0..CANONICAL_SEEDS).collect(),
        output_dir: dir.to_path_buf(),
        ..cfg.clone()
    };
    let mut modes = vec![Mode::EfPid, Mode::Greedy];
    modes.extend(baseline_modes(&cfg.actions));
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut seed_times = Vec::new();
    for &seed in &cfg.seeds {
        let t = Instant::now();
        run_seed(&cfg, seed, &modes).unwrap();
        seed_times.push(t.elapsed());
        let sd = seed_dir(dir, seed);
        reports.push(
            modes
                .iter()
                .map(|&m| {
                    (
                        m,
                        read_json::<EvaluationReport>(sd.join(m.report_file())).unwrap(),
                    )
                })
                .collect(),
        );
    }
    CanonicalRun {
        reports,
        seed_times,
        total: start.elapsed(),
        run_dir: dir.to_path_buf(),
        cfg,
    }
}

/// Largest relative deviation of daily volume from `reference` over the days
/// that start at or after `first_tick`.
fn peak_deviation(
    r: &EvaluationReport,
    ticks_per_day: usize,
    first_tick: usize,
    reference: Option<f64>,
) -> f64 {
    let first_day = first_tick.div_ceil(ticks_per_day);
    let vols: Vec<f64> = r.days[first_day..]
        .iter()
        .map(|d| d.volume as f64)
        .collect();
    let reference = reference.unwrap_or_else(|| vols.iter().sum::<f64>() / vols.len() as f64);
    vols.iter()
        .map(|v| (v - reference).abs() / reference)
        .fold(0.0, f64::max)
}

fn volume_stabilization(run: &CanonicalRun) -> Line {
    let ticks = run.cfg.ticks_per_day;
    let mut closed_worst = 0.0f64;
    let mut open_least = f64::INFINITY;
    for seed_reports in &run.reports {
        let pid = &seed_reports[&Mode::EfPid];
        closed_worst =
            closed_worst.max(peak_deviation(pid, ticks, SETTLE_TICKS, pid.target_volume));
        open_least = open_least.min(peak_deviation(
            &seed_reports[&Mode::Greedy],
            ticks,
            SETTLE_TICKS,
            None,
        ));
    }
    let slowest = run.seed_times.iter().max().copied().unwrap_or_default();
    line(
        6,
        closed_worst <= VOLUME_BAND && open_least >= OPEN_LOOP_MIN_DEVIATION && slowest < SEED_BUDGET,
        format!(
            "weekly +/-25% drift, {} seeds, days from tick {SETTLE_TICKS} on: ef_pid worst daily deviation from target \
             {:.2}% (<= {:.0}%), open-loop greedy smallest peak deviation {:.1}% (>= {:.0}%), slowest seed {:.0} s (< {} s)",
            run.reports.len(),
            closed_worst * 100.0,
            VOLUME_BAND * 100.0,
            open_least * 100.0,
            OPEN_LOOP_MIN_DEVIATION * 100.0,
            slowest.as_secs_f64(),
            SEED_BUDGET.as_secs()
        ),
    )
}

fn efficiency_dominance(run: &CanonicalRun) -> Line {
    let summary = report(&run.run_dir, &run.run_dir.join("report"), Mode::EfPid).unwrap();
    let mut pass = run.total < CANONICAL_BUDGET;
    let mut parts = Vec::new();
    for b in &summary.baselines {
        let Mode::FixedFrequency(k) = b.baseline.mode else {
            continue;
        };
        pass &= b.sign_test_p < SIGN_TEST_ALPHA;
        parts.push(format!(
            "k={k} {}/{} p={:.1e}",
            b.efficiency_wins, b.seeds_compared, b.sign_test_p
        ));
    }
    line(
        7,
        pass,
        format!(
            "ef_pid efficiency {:.4} vs fixed baselines, one-sided sign test p < {SIGN_TEST_ALPHA}: {}; total {:.0} s (< {} s)",
            summary.primary.efficiency_ratio.unwrap_or(f64::NAN),
            parts.join(", "),
            run.total.as_secs_f64(),
            CANONICAL_BUDGET.as_secs()
        ),
    )
}

fn long_horizon_premise(run: &CanonicalRun) -> Line {
    let values = run.cfg.actions.values();
    let max = *values.last().unwrap();
    let moderate: Vec<u32> = values[1..values.len() - 1].to_vec();
    let mut held = 0;
    let mut worst_margin = f64::INFINITY;
    for seed_reports in &run.reports {
        let always_max = seed_reports[&Mode::FixedFrequency(max)].accumulated_reward;
        let best = moderate
            .iter()
            .map(|&k| seed_reports[&Mode::FixedFrequency(k)].accumulated_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        held += usize::from(always_max < best);
        worst_margin = worst_margin.min(best - always_max);
    }
    line(
        8,
        held == run.reports.len(),
        format!(
            "accumulated reward (gamma {}) of always-{max} below best of k={moderate:?} in {held}/{} seeds \
             (smallest margin {worst_margin:.1})",
            run.cfg.hyper.gamma,
            run.reports.len()
        ),
    )
}

fn ef_range(run: &CanonicalRun) -> Line {
    let mut in_range = true;
    let mut parts = Vec::new();
    for seed_reports in &run.reports {
        let pid = &seed_reports[&Mode::EfPid];
        match &pid.ef_stats {
            Some(s) => {
                in_range &= s.min >= 0.0 && s.max <= 1.0;
                parts.push((s.q25, s.q75));
            }
            None => in_range = false,
        }
    }
    let mean =
        |f: fn(&(f64, f64)) -> f64| parts.iter().map(f).sum::<f64>() / parts.len().max(1) as f64;
    line(
        10,
        in_range && !parts.is_empty(),
        format!(
            "controller EF within [0, 1] in all {} runs; mean interquartile range [{:.3}, {:.3}] \
             (reference range 0.75 to 1.0; reported only)",
            parts.len(),
            mean(|p| p.0),
            mean(|p| p.1)
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(cfg: &ExperimentConfig) -> Line {
    let small = |dir: &Path| {
        let mut c = cfg.clone();
        c.env.population_size = 600;
        c.collection_population = 300;
        c.collection_days = 20;
        c.episode_length = 10;
        c.horizon_days = 10;
        c.hyper.training_steps = 500;
        c.target_volume = 400.0;
        c.seeds = vec![3, 4];
        c.output_dir = dir.to_path_buf();
        c
    };
    let modes = [
        Mode::EfPid,
        Mode::Greedy,
        Mode::EfFixed,
        Mode::FixedFrequency(1),
    ];
    let roots: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for root in &roots {
        let c = small(root.path());
        for &seed in &c.seeds {
            run_seed(&c, seed, &modes).unwrap();
        }
        report(root.path(), &root.path().join("report"), Mode::EfPid).unwrap();
    }
    let (a, b) = (files_under(roots[0].path()), files_under(roots[1].path()));
    let differing: Vec<String> = a
        .iter()
        .filter(|f| {
            std::fs::read(roots[0].path().join(f)).ok()
                != std::fs::read(roots[1].path().join(f)).ok()
        })
        .map(|f| f.display().to_string())
        .collect();
    line(
        9,
        a == b && differing.is_empty() && !a.is_empty(),
        format!(
            "two full pipeline runs: {} files each, {} differing",
            a.len(),
            differing.len() + usize::from(a != b)
        ),
    )
}

fn main() -> ExitCode {
    let cfg = canonical_config();
    let mut lines = vec![
        tabular_oracle(),
        chain_policy_match(&cfg),
        gradient_correctness(),
        ef_algebra(),
        pid_properties(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let run = canonical_run(&cfg, dir.path());
    lines.push(volume_stabilization(&run));
    lines.push(efficiency_dominance(&run));
    lines.push(long_horizon_premise(&run));
    lines.push(reproducibility(&cfg));
    lines.push(ef_range(&run));

    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        lines.len() - failed.len(),
        lines.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
