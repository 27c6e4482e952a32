mod citymap;
mod config;
mod eval;
mod fuse;
mod kernel;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "occrefine", version, about = "Offboard refinement of semantic occupancy predictions")]
struct Cli {
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, env = "OCCREFINE_THREADS")]
    threads: Option<usize>,
    /// TOML file with defaults for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse a temporal window around every frame of a sequence
    Fuse(fuse::FuseArgs),
    /// Compare prediction labels against ground truth
    Eval(eval::EvalArgs),
    /// Build a chunked city-level map from a whole sequence
    Citymap(citymap::CitymapArgs),
    /// Write a synthetic sequence with noisy predictions
    Synth(synth::SynthArgs),
    /// Run the numeric invariant and gradient checks of the attention kernel
    KernelCheck(kernel::KernelArgs),
}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Ok,
    /// A verification or metric threshold was not met.
    Failed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let file = config::FileConfig::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    match cli.command {
        Command::Fuse(a) => fuse::run(a, &file),
        Command::Eval(a) => eval::run(a, &file),
        Command::Citymap(a) => citymap::run(a, &file),
        Command::Synth(a) => synth::run(a, &file),
        Command::KernelCheck(a) => kernel::run(a, &file),
    }
}
