use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use slalom_cli::{CliError, Experiment, ExperimentConfig, RunOptions};
use slalom_core::profile::SpeedProfile;

/// Cone-slalom steering by imitation: collect expert demonstrations, train
/// the CNN, score it offline and drive the course in closed loop.
#[derive(Debug, Parser)]
#[command(name = "slalom", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the expert corpus: train.csv, test.csv and manifest.json.
    Collect {
        /// Total number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Runs assigned to the training split.
        #[arg(long)]
        train: Option<usize>,
    },
    /// Fit the model on a corpus directory.
    Train {
        /// Directory holding train.csv and optionally test.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report MSE and R² of a model on a dataset.
    EvalOffline {
        #[arg(long)]
        model: PathBuf,
        /// A dataset CSV, or a corpus directory to score both splits.
        #[arg(long)]
        data: PathBuf,
        /// Report a single CSV as the training split instead of the test split.
        #[arg(long)]
        as_train: bool,
    },
    /// Drive the course with the trained pilot.
    RunClosedloop {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Use one profile for every trial, e.g. `fixed:40`.
        #[arg(long)]
        profile: Option<SpeedProfile>,
        /// Also drive the first trial's profile with the expert and compare steering.
        #[arg(long)]
        compare_expert: bool,
    },
    /// Render figures from trace CSVs.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match &cli.command {
        Command::Collect { runs, train } => {
            if let Some(n) = runs {
                cfg.expert.num_runs = *n;
            }
            if let Some(n) = train {
                cfg.expert.train_runs = *n;
            }
        }
        Command::Train { epochs: Some(n), .. } => cfg.train.fit.epochs = *n,
        _ => {}
    }
    let exp = Experiment::new(cfg, cli.seed, cli.out)?;
    match cli.command {
        Command::Collect { .. } => {
            let c = exp.collect()?;
            println!(
                "{} runs ({} train / {} test), {} rejected; {} + {} samples in {}",
                c.manifest.runs.len(),
                c.manifest.train_runs.len(),
                c.manifest.test_runs.len(),
                c.manifest.rejected,
                c.train.len(),
                c.test.len(),
                exp.out.display()
            );
        }
        Command::Train { data, .. } => {
            let (_, r) = exp.train(&data)?;
            println!("split  n        MSE        R2");
            println!("train  {:<8} {:<10.4e} {}", r.train.n, r.train.mse, r.train.r2_display());
            if let Some(t) = r.test {
                println!("test   {:<8} {:<10.4e} {}", t.n, t.mse, t.r2_display());
            }
        }
        Command::EvalOffline { model, data, as_train } => {
            let report = exp.eval_offline(&model, &data, as_train)?;
            let o = report.offline.expect("offline metrics");
            println!("split  n        MSE        R2");
            for (name, m) in [("train", o.train), ("test", o.test)] {
                if let Some(m) = m {
                    println!("{name:<6} {:<8} {:<10.4e} {}", m.n, m.mse, m.r2_display());
                }
            }
        }
        Command::RunClosedloop { model, trials, profile, compare_expert } => {
            let outcome = exp.run_trials(&model, &RunOptions { trials, profile, compare_expert })?;
            let c = outcome.report.closed_loop.as_ref().expect("closed-loop metrics");
            for t in &c.per_trial {
                println!(
                    "trial {:02}: {:<9} peak |θ| {:.3} rad, rate RMS {:.3} rad/s, clearance {:.2} m, speed {:.1}-{:.1} km/h",
                    t.trial,
                    if t.collided { "COLLISION" } else if t.completed { "ok" } else { "FAILED" },
                    t.peak_wheel_angle,
                    t.wheel_rate_rms,
                    t.min_clearance,
                    t.speed_min_kmh,
                    t.speed_max_kmh
                );
            }
            println!("{} / {} completed, {} collisions", c.completed, c.trials, c.collisions);
            if let Some(cmp) = &outcome.report.comparison {
                for l in &cmp.lane_changes {
                    println!(
                        "lane change {}: peak |θ| pilot {:.3} rad, expert ({}) {:.3} rad",
                        l.index + 1,
                        l.pilot,
                        cmp.expert_preset,
                        l.expert
                    );
                }
            }
            if !c.passed() {
                error!("closed-loop campaign failed");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Plot { traces } => {
            for p in exp.plot(&traces)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
