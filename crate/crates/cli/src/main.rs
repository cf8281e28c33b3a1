//! `nvsim`: reproducible runs of the NV-formation simulator and its
//! estimators. All randomness derives from one master seed, so any run
//! repeated with the same config and seed emits byte-identical numeric
//! outputs, independent of worker count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nvsim_cli::config::RunConfig;
use nvsim_cli::{commands, CliError};

#[derive(Parser, Debug)]
#[command(name = "nvsim", version)]
#[command(about = "Monte Carlo NV-formation simulator and estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores). Results are identical for
    /// any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the vacancy-generation / diffusion / capture pipeline.
    Simulate {
        /// Also export the trial-0 vacancy ensemble as CSV.
        #[arg(long)]
        dump_vacancies: bool,
    },
    /// Fit the mean NV number per site to an orientation histogram.
    MleFit,
    /// Extract σ_loc from an image or positions file and decompose the
    /// variance budget.
    Localize {
        /// Also invert the simulated σ_loc(N_jumps) curve for D.
        #[arg(long = "invert-D")]
        invert_d: bool,
    },
    /// Sample the AC-sensitivity distribution and yield fraction.
    Sensitivity,
    /// Reduce a collection-efficiency map over a σ0 sweep.
    Effmap,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let (mut config, config_bytes) = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    let base_dir = config_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::Simulate { dump_vacancies } => {
            commands::simulate::run(&config, &config_bytes, &cli.out, dump_vacancies)
        }
        Command::MleFit => commands::mle_fit::run(&config, &config_bytes, &base_dir, &cli.out),
        Command::Localize { invert_d } => {
            commands::localize::run(&config, &config_bytes, &base_dir, &cli.out, invert_d)
        }
        Command::Sensitivity => {
            commands::sensitivity::run(&config, &config_bytes, &base_dir, &cli.out)
        }
        Command::Effmap => commands::effmap::run(&config, &config_bytes, &base_dir, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ CliError::Config(_)) => {
            eprintln!("nvsim: {err}");
            ExitCode::from(2)
        }
        Err(err @ CliError::Runtime(_)) => {
            eprintln!("nvsim: {err}");
            ExitCode::from(3)
        }
    }
}
