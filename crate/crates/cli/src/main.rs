//! `primetrace` — run crosslingual structural-priming experiments end to
//! end from one config file: corpus prep, tokenizer training, curriculum
//! pre-training, checkpoint sweeps, mixed-model analysis, and plots.

mod commands;
mod config;
mod errors;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::sync::atomic::Ordering;

use clap::{Parser, Subcommand};

use crate::config::Context;
use crate::errors::CliError;

#[derive(Parser)]
#[command(
    name = "primetrace",
    version,
    about = "crosslingual structural-priming experiments on toy language models",
    after_help = "Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error, \
                  5 interrupted or locked.\nAny config key can be overridden via \
                  PRIMETRACE_SECTION__KEY=value environment variables."
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Proceed past stale-hash refusals, overwriting or re-recording.
    #[arg(long, global = true)]
    force: bool,
    /// Treat validation warnings as errors.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared BPE tokenizer on both corpora.
    TrainTokenizer,
    /// Run curriculum pre-training with scheduled checkpoints (resumable).
    Pretrain {
        /// Stop after this global step (checkpoint there and exit 0).
        #[arg(long, value_name = "STEP")]
        until_step: Option<u64>,
    },
    /// Score all stimuli at every scheduled checkpoint into sweep.csv.
    Sweep,
    /// Fit the mixed model to the sweep and report per-step significance.
    Analyze,
    /// Scan the L1 corpus for lines that look like L2.
    Contamination,
    /// Render the sweep as SVG figures.
    Plot,
    /// Print the resolved experiment and artifact status (read-only).
    Describe,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.ok_or_else(|| {
        CliError::Config("pass --config <file> (a TOML experiment description)".into())
    })?;
    let ctx = Context::load(&config_path, cli.seed, cli.out, cli.force, cli.strict)?;
    match cli.command {
        Command::TrainTokenizer => commands::train_tokenizer::run(&ctx),
        Command::Pretrain { until_step } => commands::pretrain::run(&ctx, until_step),
        Command::Sweep => commands::sweep::run(&ctx),
        Command::Analyze => commands::analyze::run(&ctx),
        Command::Contamination => commands::contamination::run(&ctx),
        Command::Plot => commands::plot::run(&ctx),
        Command::Describe => commands::describe::run(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    let _ = ctrlc::set_handler(|| {
        commands::INTERRUPTED.store(true, Ordering::Relaxed);
        eprintln!("interrupt received; finishing the current step...");
    });
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error ({}): {e}", e.class());
            std::process::exit(e.exit_code());
        }
    }
}
