//! `uniting`: runs the optimization experiments described by a TOML config.

mod commands;
mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use experiment::RunOptions;

#[derive(Parser)]
#[command(name = "uniting", version, about = "Hybrid uniting optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every run, write one CSV trace per run and runs.json.
    Run(Common),
    /// Settling times and percent improvements, optionally over a sweep of initial positions.
    Compare(Common),
    /// Perturb a run's gradient measurements for every (sigma, seed) pair.
    Noise(Common),
    /// Print derived constants and check the hysteresis geometry.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration step for every run.
    #[arg(long)]
    step: Option<f64>,
    /// Record every integration step instead of every `record_every`-th.
    #[arg(long)]
    full_trace: bool,
    /// Single noise seed (noise) or sampling seed (validate).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            step: self.step,
            full_trace: self.full_trace,
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (Command::Run(c) | Command::Compare(c) | Command::Noise(c) | Command::Validate(c)) = &cli.command;
    let cfg = ExperimentConfig::load(&c.config)?;
    let opts = c.options();
    let out = c.out.as_deref();
    match &cli.command {
        Command::Run(_) => commands::cmd_run(&cfg, out, &opts).map(|_| true),
        Command::Compare(_) => commands::cmd_compare(&cfg, out, &opts).map(|_| true),
        Command::Noise(_) => commands::cmd_noise(&cfg, out, &opts, c.seed).map(|_| true),
        Command::Validate(_) => commands::cmd_validate(&cfg, &opts, c.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
