//! `labelflow`: label short texts through a chat-completion backend, vote
//! label files together, evaluate against gold labels and estimate cost.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rust_decimal::Decimal;

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "labelflow", version, about = "Batch zero-shot labeling of short texts")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the mock backend seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Only process this category key.
    #[arg(long)]
    category: Option<String>,
    /// Overrides `runs`.
    #[arg(long)]
    runs: Option<usize>,
    /// Overrides `batching.max_items`.
    #[arg(long)]
    max_items: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label every configured category and write `id,label` files.
    Label {
        #[arg(long, value_enum, default_value_t = BackendKind::Http)]
        backend: BackendKind,
        #[command(flatten)]
        plan: PlanArgs,
        /// Overrides `parallelism` of the backend section.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Write the exchange ledger here (overrides `ledger`).
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Score predictions (and optionally crowd labels) against gold labels.
    Evaluate {
        pred: PathBuf,
        gold: PathBuf,
        #[arg(long)]
        crowd: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Section name used in the report.
        #[arg(long, default_value = "all")]
        category: String,
        /// Also dump the confusion matrices as CSV into this directory.
        #[arg(long)]
        matrix_dir: Option<PathBuf>,
        /// Ledger written by `label`, for cost and wall time.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Published prediction accuracy (percent) to check against.
        #[arg(long)]
        reference_llm: Option<Decimal>,
        /// Published crowd accuracy (percent) to check against.
        #[arg(long)]
        reference_crowd: Option<Decimal>,
    },
    /// Majority-vote an odd number of label files with identical ids.
    Vote {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dry run: batches, token bounds and projected cost.
    Estimate {
        #[command(flatten)]
        plan: PlanArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("incomplete: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
