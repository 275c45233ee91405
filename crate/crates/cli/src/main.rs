//! `atc-coder`: batch ATC coding, evaluation and dataset tooling.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{BackendArgs, CommonArgs, DatasetArgs};

#[derive(Debug, Parser)]
#[command(name = "atc-coder", version, about = "Assign ATC codes to drug mentions with a chat model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Code every mention in a file (one per line) and write JSONL traces.
    Code {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Trace JSONL destination; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mentions file, one mention per line.
        input: PathBuf,
    },
    /// Score prediction JSONL files against a labeled dataset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Labeled dataset (CSV or TSV).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Trace or prediction JSONL; repeat to compare runs side by side.
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        /// Column titles for the runs, in --predictions order.
        #[arg(long)]
        label: Vec<String>,
        /// Only score items whose granularity is 5 (or unset).
        #[arg(long)]
        full_granularity_only: bool,
        /// Report JSON destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified train/test split by level-1 group.
    Split {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Fraction of each group assigned to train.
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        input: PathBuf,
    },
    /// Write chat-format fine-tuning records replaying gold traversals.
    ExportSft {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Labeled dataset (CSV or TSV).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Also emit levels where the gold path offers a single option.
        #[arg(long)]
        include_single_child: bool,
        #[arg(long)]
        out: PathBuf,
        /// Manifest destination [default: <out>.manifest.json].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Entry counts and option statistics for an ontology.
    OntologyStats {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fraction of mentions that contain, or are contained in, their generic name.
    AnalyzeOverlap {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArgs,
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Code { common, backend, dataset, out, input } => {
            commands::code(&common, &backend, &dataset, out.as_deref(), &input)
        }
        Command::Eval { common, dataset, gold, predictions, label, full_granularity_only, out } => {
            commands::eval(&common, &dataset, gold, &predictions, &label, full_granularity_only, out.as_deref())
        }
        Command::Split { common, dataset, ratio, seed, train_out, test_out, input } => {
            commands::split(&common, &dataset, ratio, seed, &train_out, &test_out, &input)
        }
        Command::ExportSft { common, dataset, gold, include_single_child, out, manifest } => {
            commands::export_sft(&common, &dataset, gold, include_single_child, &out, manifest)
        }
        Command::OntologyStats { common } => commands::ontology_stats(&common),
        Command::AnalyzeOverlap { common, dataset, input } => commands::analyze_overlap(&common, &dataset, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
