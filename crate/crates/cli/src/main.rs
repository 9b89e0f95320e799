use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod checks;
mod commands;
mod config;
mod output;

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// A comparison or invariant did not hold; exits with status 1.
    Failed,
}

#[derive(Parser)]
#[command(
    name = "vwa",
    version,
    about = "Varying window attention: cost sweeps, ERF maps, checks and decoder demos"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON file layered over the command defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing output files
    #[arg(long, global = true)]
    pub force: bool,
    /// Dotted-key override applied last, e.g. `--set decoder.scale_group=[2,4]`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep layer variants and compare measured against closed-form costs
    Cost(commands::cost::CostArgs),
    /// Effective receptive field of one operator as PGM/PPM heatmaps
    Erf(commands::erf::ErfArgs),
    /// One attention row as CSV with padded-key flags and collapse metric
    Dump(commands::dump::DumpArgs),
    /// Run an invariant suite: equivalence, gradcheck, collapse, channels, all
    Check(commands::check::CheckArgs),
    /// Decode synthetic features and write logits plus a cost report
    Demo(commands::demo::DemoArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VWA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Cost(a) => commands::cost::run(&cli.common, a),
        Command::Erf(a) => commands::erf::run(&cli.common, a),
        Command::Dump(a) => commands::dump::run(&cli.common, a),
        Command::Check(a) => commands::check::run(&cli.common, a),
        Command::Demo(a) => commands::demo::run(&cli.common, a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<Usage>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<vwa_core::Error>(),
        Some(vwa_core::Error::Config(_) | vwa_core::Error::Geometry { .. } | vwa_core::Error::Index(_))
    )
}
