//! Command-line front end: synthetic data, vocabulary, online runs,
//! evaluation and attention exports.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sysloglm::error::ErrorClass;

/// Overrides `paths.out_dir` of every command.
pub const OUT_DIR_ENV: &str = "SYSLOGLM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "sysloglm",
    version,
    about = "Language-model anomaly detection for authentication logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(short, long)]
    config: std::path::PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic LANL-format corpus and red-team key file.
    Synth(ConfigArg),
    /// Build the frozen vocabulary from one day of the corpus.
    BuildVocab(ConfigArg),
    /// Run the day cycle over the corpus, writing scores and checkpoints.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute ROC and AUC from one or more score files.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Score files; defaults to the run's `scores.csv`. Several files
        /// (one per seed) also produce a summary table.
        #[arg(long)]
        scores: Vec<std::path::PathBuf>,
    },
    /// Export attention traces and the mean/std heatmap for one day.
    ExportAttention {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        day: u32,
    },
    /// Export per-line case studies for one day.
    ExportCase {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        day: u32,
        /// Line ids to export.
        #[arg(long = "line", conflicts_with_all = ["top", "red"])]
        lines: Vec<u64>,
        /// Export the k highest-scoring lines.
        #[arg(long, conflicts_with = "red")]
        top: Option<usize>,
        /// Export every red-team line.
        #[arg(long)]
        red: bool,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
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
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "class": format!("{:?}", e.class()).to_lowercase(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
