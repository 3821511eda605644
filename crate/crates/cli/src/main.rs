use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clipgrain_cli::commands::{self, RunOptions};
use clipgrain_cli::config::{ExperimentConfig, SEED_ENV_VAR};
use clipgrain_cli::CliError;

/// Desk-scale data-parallel SGD simulator for studying gradient-clipping
/// granularity and unintended memorization.
#[derive(Parser)]
#[command(name = "clipgrain", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides config and CLIPGRAIN_SEED)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker pool size for fanning out (policy, seed) runs
    #[arg(long)]
    parallel: Option<usize>,
    /// Overwrite an existing output directory
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate every model's analytic gradient against finite differences
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Test fixture: offset one analytic gradient coordinate so the
        /// failure path can be exercised
        #[arg(long, hide = true)]
        corrupt_gradient: Option<f64>,
    },
    /// Run one training per (policy, seed) pair and export trajectories
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the secret-sharer canary audit and report exposures
    Exposure {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Grid-search the per-core clipping bound against an unclipped baseline
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated bounds (overrides `[sweep] bounds`)
        #[arg(long, value_delimiter = ',')]
        bounds: Option<Vec<f64>>,
    },
}

fn load(common: &CommonArgs) -> Result<(ExperimentConfig, RunOptions), CliError> {
    let config = ExperimentConfig::from_path(&common.config)?;
    let env_seeds = std::env::var(SEED_ENV_VAR).ok();
    let resolved = config.resolve(
        common.seeds.as_deref(),
        env_seeds.as_deref(),
        common.out.as_deref(),
    )?;
    let opts = RunOptions {
        out: resolved.out_dir,
        force: common.force,
        parallel: common.parallel,
    };
    Ok((resolved.config, opts))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gradcheck { common, corrupt_gradient } => {
            // config must parse and validate even though the check suite is fixed
            let (_config, opts) = load(&common)?;
            commands::cmd_gradcheck(&opts, corrupt_gradient)?;
        }
        Command::Train { common } => {
            let (config, opts) = load(&common)?;
            commands::cmd_train(&config, &opts)?;
        }
        Command::Exposure { common } => {
            let (config, opts) = load(&common)?;
            commands::cmd_exposure(&config, &opts)?;
        }
        Command::Sweep { common, bounds } => {
            let (config, opts) = load(&common)?;
            let bounds = bounds.unwrap_or_else(|| config.sweep.bounds.clone());
            commands::cmd_sweep(&config, &opts, &bounds)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
