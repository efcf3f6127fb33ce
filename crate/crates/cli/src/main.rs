//! `lrexplain`: generate, train, score and evaluate explanation
//! likelihood-ratio models from the command line.

mod commands;
mod config;
mod embedders;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "lrexplain", version, about = "Likelihood-ratio evaluation of face verification explanations")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "LREXPLAIN_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "LREXPLAIN_SEED")]
    seed: Option<u64>,
    /// Worker threads for embedding, generation and metrics.
    #[arg(long, global = true, env = "LREXPLAIN_PARALLELISM")]
    parallelism: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the explanation model about every pair in a manifest.
    Generate(commands::generate::GenerateArgs),
    /// Fit the PCA transform and both class mixtures from a training manifest.
    Train(commands::train::TrainArgs),
    /// Score a test manifest with a trained bundle.
    Score(commands::score::ScoreArgs),
    /// Build ROC, confusion, separability and projection reports.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Write synthetic training and test manifests with known densities.
    Synth(commands::synth::SynthArgs),
}

/// Global settings after merging flags, environment and config file.
pub struct Context {
    pub seed: u64,
    pub parallelism: usize,
    pub file: FileConfig,
}

impl Context {
    fn resolve(g: &GlobalArgs) -> anyhow::Result<Self> {
        let file = FileConfig::load(g.config.as_deref())?;
        let parallelism = g
            .parallelism
            .or(file.parallelism)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if parallelism == 0 {
            return Err(error::usage("--parallelism must be at least 1"));
        }
        Ok(Self {
            seed: g.seed.or(file.seed).unwrap_or(0),
            parallelism,
            file,
        })
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Context::resolve(&cli.global)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.parallelism)
        .build_global()
        .ok();
    match cli.command {
        Command::Generate(a) => commands::generate::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Score(a) => commands::score::run(&ctx, a),
        Command::Evaluate(a) => commands::evaluate::run(&ctx, a),
        Command::Synth(a) => commands::synth::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
