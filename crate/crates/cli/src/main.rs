use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Bad flags, config or missing inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "acae", version, about = "Adversarial collaborative auto-encoder for top-N recommendation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `section.key=value` config override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and binarize the dataset, write the split and stats.
    Prepare,
    /// Pre-train, then adversarially train.
    Train(commands::TrainArgs),
    /// HR/NDCG of a checkpoint on the test split.
    Eval(commands::EvalArgs),
    /// Adversarial robustness curve at one noise site.
    Robustness(commands::RobustnessArgs),
    /// Gaussian and adversarial noise impact at every site.
    Probe(commands::ProbeArgs),
    /// Popularity baseline on the test split.
    Itempop(commands::SplitArgs),
    /// Grid sweep over config keys, one summary row per point.
    Sweep(commands::SweepArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<acae_core::AcaeError>() {
        Some(acae_core::AcaeError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
        Some(acae_core::AcaeError::InvalidInput(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let cfg = config::load(
            cli.global.config.as_deref(),
            &cli.global.overrides,
            cli.global.seed,
            cli.global.out.as_deref(),
        )?;
        match cli.command {
            Command::Prepare => commands::prepare(&cfg),
            Command::Train(a) => commands::train(&cfg, &a),
            Command::Eval(a) => commands::eval(&cfg, &a),
            Command::Robustness(a) => commands::robustness(&cfg, &a),
            Command::Probe(a) => commands::probe(&cfg, &a),
            Command::Itempop(a) => commands::itempop(&cfg, &a),
            Command::Sweep(a) => commands::sweep(&cfg, &a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
