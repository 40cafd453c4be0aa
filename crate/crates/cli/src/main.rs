use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cmd_baseline;
mod cmd_experiments;
mod cmd_gen_train;
mod cmd_theory;
mod config;
mod data;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "declip", version, about = "Self-supervised declipping experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Master seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid cells and Monte Carlo blocks.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// TOML config for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "DECLIP_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
}

impl Global {
    pub fn seed_or(&self, from_config: Option<u64>) -> u64 {
        self.seed.or(from_config).unwrap_or(DEFAULT_SEED)
    }

    pub fn out_file(&self, name: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    pub fn require_config(&self, command: &str) -> anyhow::Result<&PathBuf> {
        self.config
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("`{command}` needs --config <file>"))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset CSV and metadata sidecar.
    Gen,
    /// Train a network on a generated dataset.
    Train,
    /// Supervised vs self-supervised sweep over subspace dimension and clip fraction.
    Sweep,
    /// MC+EI vs NMC+EI dynamic-range experiment on the digit cone.
    DynamicRange,
    /// Monte Carlo checks of the recovery theory.
    Theory(cmd_theory::TheoryArgs),
    /// Learning-free HQS declipping baseline.
    Baseline(cmd_baseline::BaselineArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Gen => cmd_gen_train::gen(g),
        Command::Train => cmd_gen_train::train(g),
        Command::Sweep => cmd_experiments::sweep(g),
        Command::DynamicRange => cmd_experiments::dynamic_range(g),
        Command::Theory(args) => cmd_theory::run(g, &args),
        Command::Baseline(args) => cmd_baseline::run(g, &args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
