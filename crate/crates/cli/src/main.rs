//! `freqctl`: collect, train, evaluate and report frequency-control runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or contract violation,
//! 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use freqctl::experiment::{
    collect_to_dir, evaluate, evaluate_to_dir, load_network, report, seed_dir, train_to_dir,
    write_controller_csv, ExperimentConfig, Mode, CHECKPOINT_FILE,
};
use freqctl::Error;

#[derive(Parser)]
#[command(
    name = "freqctl",
    version,
    about = "Long-term-value frequency control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Log exploratory episodes from the collection population.
    Collect(Common),
    /// Train a Q-network on a seed's episode log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Episode log to train on instead of the seed directory's.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a policy over the horizon.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// greedy | ef_fixed | ef_pid | fixed_frequency:<k>
        #[arg(long)]
        mode: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare open-loop greedy with PID-controlled EF day by day.
    ControlDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Aggregate evaluation reports into CSV and JSON artifacts.
    Report {
        #[command(flatten)]
        common: Common,
        /// Mode compared against every other evaluated mode.
        #[arg(long, default_value = "ef_pid")]
        mode: String,
    },
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn parse_mode(s: &str) -> anyhow::Result<Mode> {
    s.parse::<Mode>()
        .map_err(|e| anyhow::Error::new(UsageError(e.to_string())))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Collect(common) => {
            let cfg = common.load()?;
            for &seed in &cfg.seeds {
                let path = collect_to_dir(&cfg, seed)?;
                println!("seed {seed}: {}", path.display());
            }
        }
        Command::Train { common, log } => {
            let cfg = common.load()?;
            for &seed in &cfg.seeds {
                let path = train_to_dir(&cfg, seed, log.as_deref())?;
                println!("seed {seed}: {}", path.display());
            }
        }
        Command::Evaluate {
            common,
            mode,
            checkpoint,
        } => {
            let mode = parse_mode(&mode)?;
            let cfg = common.load()?;
            for &seed in &cfg.seeds {
                let r = evaluate_to_dir(&cfg, seed, mode, checkpoint.as_deref())?;
                println!(
                    "seed {seed} {mode}: volume {} metrics {:.3} efficiency {}",
                    r.total_volume,
                    r.total_metrics,
                    fmt_opt(r.efficiency_ratio)
                );
            }
        }
        Command::ControlDemo { common, checkpoint } => {
            let cfg = common.load()?;
            for &seed in &cfg.seeds {
                control_demo(&cfg, seed, checkpoint.as_deref())?;
            }
        }
        Command::Report { common, mode } => {
            let mode = parse_mode(&mode)?;
            let cfg = common.load()?;
            let out = cfg.output_dir.join("report");
            let summary = report(&cfg.output_dir, &out, mode)?;
            println!(
                "{mode}: volume {} efficiency {}",
                summary.primary.volume,
                fmt_opt(summary.primary.efficiency_ratio)
            );
            for b in &summary.baselines {
                println!(
                    "  vs {}: efficiency delta {} wins {}/{} sign-test p {:.3e}",
                    b.baseline.mode,
                    fmt_opt(b.efficiency_delta),
                    b.efficiency_wins,
                    b.seeds_compared,
                    b.sign_test_p
                );
            }
            println!("artifacts in {}", out.display());
        }
    }
    Ok(())
}

fn control_demo(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    let dir = seed_dir(&cfg.output_dir, seed);
    let path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let net = load_network(&path)?;
    let open = evaluate(cfg, seed, Mode::Greedy, Some(&net))?;
    let closed = evaluate(cfg, seed, Mode::EfPid, Some(&net))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let csv = dir.join(Mode::EfPid.controller_file());
    write_controller_csv(&csv, &closed.trace)?;

    println!("seed {seed}: daily target {}", cfg.target_volume);
    println!(
        "{:>4} {:>7} {:>10} {:>10}",
        "day", "drift", "greedy", "ef_pid"
    );
    for (o, c) in open.report.days.iter().zip(&closed.report.days) {
        println!(
            "{:>4} {:>7.3} {:>10} {:>10}",
            o.day, o.multiplier, o.volume, c.volume
        );
    }
    if let Some(ef) = &closed.report.ef_stats {
        println!(
            "EF: median {:.3}, IQR [{:.3}, {:.3}], range [{:.3}, {:.3}]",
            ef.median, ef.q25, ef.q75, ef.min, ef.max
        );
    }
    println!("controller trace: {}", csv.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_data_error() => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
