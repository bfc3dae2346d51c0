//! `imlab`: run experiments, diagnose result directories, sweep seeds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use imlab::harness::{self, output, ExperimentConfig, LearnerKind};
use imlab::Error;

#[derive(Parser)]
#[command(
    name = "imlab",
    version,
    about = "Adversarial imitation learning on finite episodic MDPs"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured learner and write metrics, summary and artifacts.
    Run {
        config: PathBuf,
        /// Result directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the error decomposition of a result directory and print the regret curve.
    Diagnose { result_dir: PathBuf },
    /// Run seeded replicas in parallel and aggregate their medians.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run behavioral cloning on the configured environment and demonstrations.
    Bc {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIAGNOSE: u8 = 3;

/// Failure classes that map to distinct exit codes.
enum Failure {
    Config(String),
    Diagnose(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(msg)) => Failure::Config(msg.clone()),
            _ => Failure::Other(e),
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    match ExperimentConfig::load(path) {
        Ok(c) => Ok(c),
        Err(Error::Config(msg)) => Err(Failure::Config(msg)),
        Err(Error::Io(e)) => Err(Failure::Config(format!("{}: {e}", path.display()))),
        Err(e) => Err(Failure::Other(e.into())),
    }
}

fn output_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    out.or_else(|| config.output.clone()).ok_or_else(|| {
        Failure::Config("no output directory: pass --out or set \"output\" in the config".into())
    })
}

fn print_summary(quiet: bool, dir: &Path, result: &harness::ExperimentResult) {
    if quiet {
        return;
    }
    println!(
        "{} on {}: K={} gap={:.6} normalized={:.4} interactions={} -> {}",
        result.learner.as_str(),
        result.config.env.kind(),
        result.records.len(),
        result.final_gap(),
        result.normalized_gap(),
        result.interactions,
        dir.display()
    );
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let dir = output_dir(&cfg, out)?;
            let result = harness::run_experiment(&cfg).context("run failed")?;
            output::write_result(&result, &dir).context("writing results")?;
            print_summary(cli.quiet, &dir, &result);
        }
        Command::Bc { config, out } => {
            let cfg = ExperimentConfig {
                learner: LearnerKind::Bc,
                ..load(&config)?
            };
            let dir = output_dir(&cfg, out)?;
            let result = harness::run_bc(&cfg).context("run failed")?;
            output::write_result(&result, &dir).context("writing results")?;
            print_summary(cli.quiet, &dir, &result);
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = load(&config)?;
            let dir = output_dir(&cfg, out)?;
            let results = harness::run_sweep(&cfg, seeds).context("sweep failed")?;
            let agg = output::write_sweep(&results, &dir).context("writing results")?;
            if !cli.quiet {
                println!(
                    "{} seeds: median gap={:.6} median normalized={:.4} -> {}",
                    agg.seeds.len(),
                    agg.median_final_gap,
                    agg.median_normalized_gap,
                    dir.display()
                );
            }
        }
        Command::Diagnose { result_dir } => {
            let d = output::diagnose(&result_dir).context("diagnosis failed")?;
            if !cli.quiet {
                println!("{d}");
            }
            if !d.passed() {
                return Err(Failure::Diagnose(format!(
                    "decomposition check failed: difference {:.3e}, recorded mismatch {:.3e}",
                    d.report.difference, d.recorded_mismatch
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diagnose(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_DIAGNOSE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
