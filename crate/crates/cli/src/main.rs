//! `colloql` command-line entry point.
//!
//! Exit status: 0 on success, 1 when a run fails (invalid corpus, bad input
//! file, runtime error), 2 on usage errors.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Inputs were read but failed validation.
    Invalid(String),
    Failure(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) | CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Invalid(m) => write!(f, "validation failed: {m}"),
            CliError::Failure(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

impl From<colloql::Error> for CliError {
    fn from(e: colloql::Error) -> Self {
        match e {
            colloql::Error::Parse { .. } => CliError::Invalid(e.to_string()),
            other => CliError::Failure(other.into()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "colloql", version, about = "Colloquial question to SQL pipeline", arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct Common {
    /// Examples file (line-delimited JSON).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Tables file (line-delimited JSON).
    #[arg(long, global = true)]
    pub tables: Option<PathBuf>,
    /// Sampling strategy: none, rand, rel or em1; `rel:3` also sets k.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Samples per column.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Serialized input token budget.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Output directory; defaults to $COLLOQL_OUT_DIR, then ./colloql-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a corpus against its tables.
    Validate {
        #[arg(long)]
        max_conds: Option<usize>,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        n_tables: Option<usize>,
        #[arg(long)]
        rows_per_table: Option<usize>,
        #[arg(long)]
        questions_per_table: Option<usize>,
        #[arg(long)]
        neutral_header_rate: Option<f64>,
        /// Also write a held-out split over this many fresh tables.
        #[arg(long)]
        heldout: Option<usize>,
        /// Also write an ambiguity probe over this many fresh tables.
        #[arg(long)]
        probe: Option<usize>,
    },
    /// Add short keyword-style variants of each example.
    Augment {
        #[arg(long)]
        mix_ratio: Option<f64>,
        /// Relational replacement list (`pattern<TAB>op<TAB>symbol` lines).
        #[arg(long)]
        replacements: Option<PathBuf>,
    },
    /// Build content indexes and offline random samples for every table.
    Index,
    /// Print the samples a strategy picks for one question.
    Sample {
        #[arg(long)]
        table_id: String,
        #[arg(long)]
        question: String,
    },
    /// Print the serialized model input for one question.
    Serialize {
        #[arg(long)]
        table_id: String,
        #[arg(long)]
        question: String,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// Development examples evaluated after every epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        /// Augment the training corpus first.
        #[arg(long)]
        augment: bool,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate several strategies (and checkpoints) side by side.
    Compare {
        /// One checkpoint shared by all strategies, or one per strategy.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Comma-separated strategies, e.g. `none,rand:3,rel:3`.
        #[arg(long)]
        strategies: Option<String>,
    },
    /// Time sampling on large synthetic tables.
    Bench {
        /// Comma-separated row counts.
        #[arg(long)]
        rows: Option<String>,
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Render a sketch as SQL.
    Render {
        /// Sketch in wire form, e.g. `{"sel":0,"agg":0,"conds":[[1,0,"42"]]}`.
        #[arg(long)]
        sketch: String,
        #[arg(long)]
        table_id: Option<String>,
        /// Comma-separated headers, instead of --tables.
        #[arg(long)]
        headers: Option<String>,
    },
    /// Answer questions read from stdin against one table.
    Repl {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        table_id: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Synth { .. } => "synth",
            Command::Augment { .. } => "augment",
            Command::Index => "index",
            Command::Sample { .. } => "sample",
            Command::Serialize { .. } => "serialize",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
            Command::Bench { .. } => "bench",
            Command::Render { .. } => "render",
            Command::Repl { .. } => "repl",
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
