//! Command-line driver: build data, train, evaluate, generate, and run
//! ablations, every run stamped with a reproducibility manifest.

mod commands;
mod config;
mod lock;
mod manifest;

use clap::{Args, Parser, Subcommand};
use config::{RootConfig, StrategyName};
use lock::RunLock;
use manifest::ManifestBuilder;
use proplm::Result;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "proplm", version, about = "Dual-signal proposition language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and unified proposition data.
    BuildData(Common),
    /// Train a model on a build-data directory.
    Train(Common),
    /// Score a checkpoint: perplexity plus per-task judgment metrics.
    Eval(Common),
    /// Continue a prompt with greedy, top-k, or beam decoding.
    Generate(GenerateArgs),
    /// Train a baseline and an ablated variant, then diff their reports.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// Root TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the run's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for this run's artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Prompt text to continue.
    #[arg(long)]
    prompt: Option<String>,
    /// Decoding strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyName>,
    /// Candidate pool size for top-k sampling (default 50).
    #[arg(long)]
    k: Option<usize>,
    /// Beam count for beam search (default 5).
    #[arg(long)]
    beam_width: Option<usize>,
    /// Maximum number of generated tokens (default 256).
    #[arg(long)]
    max_new: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (name, common): (&str, &Common) = match &cli.command {
        Command::BuildData(c) => ("build-data", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Generate(g) => ("generate", &g.common),
        Command::Ablate(c) => ("ablate", c),
    };
    let mut config = RootConfig::load(&common.config)?;

    // Flags override the config; the manifest snapshots the merged result.
    if let Command::Generate(g) = &cli.command {
        if let Some(prompt) = &g.prompt {
            config.generate.prompt = prompt.clone();
        }
        if let Some(strategy) = g.strategy {
            config.generate.strategy = strategy;
        }
        if let Some(k) = g.k {
            config.generate.k = k;
        }
        if let Some(width) = g.beam_width {
            config.generate.beam_width = width;
        }
        if let Some(max_new) = g.max_new {
            config.generate.max_new = max_new;
        }
        if let Some(seed) = g.common.seed {
            config.generate.seed = seed;
        }
    }
    let seed = common.seed.unwrap_or(match &cli.command {
        Command::BuildData(_) => config.data.seed,
        Command::Generate(_) => config.generate.seed,
        _ => config.train.params.seed,
    });

    let _lock = RunLock::acquire(&common.out)?;
    let mut manifest = ManifestBuilder::new(&common.out, name, config.snapshot()?, seed);
    manifest.record_input(&common.config)?;
    match &cli.command {
        Command::BuildData(_) => commands::build_data(&config, seed, &mut manifest)?,
        Command::Train(_) => commands::train(&config, seed, &mut manifest)?,
        Command::Eval(_) => commands::eval(&config, seed, &mut manifest)?,
        Command::Generate(_) => commands::generate(&config, seed, &mut manifest)?,
        Command::Ablate(_) => commands::ablate(&config, seed, &mut manifest)?,
    }
    manifest.finish()
}
