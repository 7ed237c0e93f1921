//! `annogate`: run the validated annotation workflow from a project directory.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use annogate::workflow::{ExportFormat, ReviewMode};
use clap::{Parser, Subcommand};

use commands::{AnnotateArgs, SplitChoice, Stage};
use config::{ProjectConfig, RunOverrides};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "annogate", version, about = "Validated LLM text annotation")]
struct Cli {
    /// Project config file [default: $ANNOGATE_CONFIG, then ./annogate.toml]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scaffold a new project directory.
    Init { directory: PathBuf },
    /// Annotate one split with repeated sampling; resumable.
    Annotate {
        #[arg(long, value_enum)]
        split: SplitChoice,
        /// Defaults to `<split>-v<codebook version>`.
        #[arg(long)]
        run_id: Option<String>,
        /// Proceed even if the estimated cost exceeds the ceiling.
        #[arg(long)]
        yes: bool,
        #[arg(long)]
        passes: Option<u32>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        concurrency: Option<usize>,
        /// Stop after this many requests, leaving the run resumable.
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
    },
    /// Score a finished run against gold labels and record it in the ledger.
    Evaluate {
        #[arg(long)]
        run_id: String,
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Write a human-review queue for a finished run.
    Review {
        #[arg(long)]
        run_id: String,
        /// edge_cases, positives or both
        #[arg(long, default_value = "edge_cases")]
        mode: ReviewMode,
        /// Rows shown on the console; the file always has every row.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Export high-consistency labels as training data.
    Export {
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        min_consistency: f64,
        /// csv or jsonl
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = || {
        let path = ProjectConfig::locate(cli.config.as_deref());
        ProjectConfig::load(&path)
    };
    match cli.command {
        Command::Init { ref directory } => commands::init(directory),
        Command::Annotate {
            split,
            ref run_id,
            yes,
            passes,
            temperature,
            concurrency,
            stop_after,
        } => commands::annotate(
            load()?,
            AnnotateArgs {
                split,
                run_id: run_id.clone(),
                yes,
                overrides: RunOverrides {
                    passes,
                    temperature,
                    concurrency,
                },
                stop_after,
            },
        ),
        Command::Evaluate { ref run_id, stage } => commands::evaluate(load()?, run_id, stage),
        Command::Review {
            ref run_id,
            mode,
            limit,
        } => commands::review(load()?, run_id, mode, limit),
        Command::Export {
            ref run_id,
            min_consistency,
            format,
        } => commands::export(load()?, run_id, min_consistency, format),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on bad usage; usage errors are 1 here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = e.hint() {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
