//! `mrc`: direct and inverse scattering experiments driven by JSON configs.
//!
//! Exit codes: 0 when the computation reached its target, 2 when output was
//! written but the target was missed (unconverged solve, forward solve or
//! reconstruction quorum), 1 on any error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mrc", version, about = "Acoustic scattering by star-shaped obstacles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Size of the worker pool (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the direct problem; writes solution.json.
    Solve(Common),
    /// Generate near-field data on a sphere; writes nearfield.json.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Noise seed, overriding the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct the boundary; writes reconstruction.json and reconstruction.csv.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Near-field data written by `synthesize`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Exact sphere coefficients; writes oracle_<condition>.json.
    Oracle(Common),
    /// Sample a stored solution at points; writes fieldmap.csv.
    Fieldmap(Common),
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let common = match &cli.command {
        Command::Solve(c) | Command::Oracle(c) | Command::Fieldmap(c) => c,
        Command::Synthesize { common, .. } | Command::Invert { common, .. } => common,
    };
    std::fs::create_dir_all(&common.out).with_context(|| format!("cannot create {}", common.out.display()))?;
    let (config, out) = (common.config.as_path(), common.out.as_path());
    match &cli.command {
        Command::Solve(_) => commands::solve(config, out),
        Command::Synthesize { seed, .. } => commands::synthesize_data(config, out, *seed),
        Command::Invert { data, .. } => commands::invert(data, config, out),
        Command::Oracle(_) => commands::oracle(config, out),
        Command::Fieldmap(_) => commands::fieldmap(config, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MRC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors; usage errors map to 1, not clap's 2.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
