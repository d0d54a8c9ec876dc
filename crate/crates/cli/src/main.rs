//! `ivimfit`: simulate, fit and evaluate IVIM decay data.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::Common;
use config::{parse_method, RunConfig};

#[derive(Parser)]
#[command(name = "ivimfit", version, about = "IVIM model fitting with variable projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic volume or curve table with its ground truth.
    Simulate(CommonArgs),
    /// Fit a volume or curve table and write parameter maps.
    Fit(CommonArgs),
    /// Cross-validated R², MSE and evaluation counts per method.
    Evaluate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input volume (`.hdr`/`.raw`) or curve table (`.csv`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// varpro_sh, varpro_de, msnlls or dstar_fixed.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonArgs {
    fn resolve(self) -> Result<Common> {
        let config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let method = self.method.as_deref().map(parse_method).transpose()?;
        Ok(Common {
            seed: self.seed.or(config.seed).unwrap_or(0),
            workers: self.workers.or(config.workers).unwrap_or(1).max(1),
            config,
            input: self.input,
            output: self.output,
            method,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    let staged = match cli.command {
        Command::Simulate(a) => commands::simulate_cmd(&a.resolve()?)?,
        Command::Fit(a) => commands::fit_cmd(&a.resolve()?)?,
        Command::Evaluate(a) => commands::evaluate_cmd(&a.resolve()?)?,
    };
    staged.commit()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
