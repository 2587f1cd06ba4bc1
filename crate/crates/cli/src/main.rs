use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sifb_cli::commands::{cmd_constants, cmd_run, cmd_sweep, cmd_validate};

/// Stochastic inertial forward-backward and primal-dual experiments.
/// Exit codes: 0 success, 1 validation failure, 2 run failure.
#[derive(Parser)]
#[command(name = "sifb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every hypothesis the configured algorithm relies on.
    Validate { config: PathBuf },
    /// Run once and write trace.csv, summary.json and resolved_config.toml.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run independent replicas with derived seeds.
    Sweep {
        config: PathBuf,
        /// Number of replicas; seeds derive from the config's master seed.
        #[arg(long)]
        seeds: Option<usize>,
        /// Worker threads; defaults to available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the primal-dual step constants as JSON.
    Constants { config: PathBuf },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Sweep {
            config,
            seeds,
            jobs,
            out,
        } => cmd_sweep(&config, seeds, jobs, out),
        Command::Constants { config } => cmd_constants(&config),
    };
    ExitCode::from(code)
}
