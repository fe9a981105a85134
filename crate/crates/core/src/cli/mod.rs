//! Command-line surface: flat configs, checkpoints, and the commands that
//! tie the library together into reproducible runs.
//!
//! Every command writes its artifacts under `--out` and returns the text it
//! prints, so tests can drive [`run`] without a subprocess.

pub mod checkpoint;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use checkpoint::{Checkpoint, CheckpointError};
pub use commands::{
    load_model, model_checkpoint, read_metrics, LoadedModel, Model, NVDM_FILE, PARETO_FILE, PROFILE_FILE, TOPICS_FILE,
};
pub use config::{Config, ConfigError};

use crate::corpus::CorpusError;
use crate::costing::CostError;
use crate::trainer::TrainError;

pub const EXIT_OK: i32 = 0;
/// Training or numeric failure.
pub const EXIT_FAILURE: i32 = 1;
/// Unreadable file, malformed input or bad arguments.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CHECKSUM: i32 = 3;
/// The corpus was read but cannot be used (empty vocabulary, no usable
/// bag of words, bad partitioning).
pub const EXIT_CORPUS: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Train(e.into())
    }
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Config { .. } | CliError::Parse { .. } | CliError::Usage(_) => EXIT_INPUT,
            CliError::Cost(_) => EXIT_INPUT,
            CliError::Checkpoint(CheckpointError::Checksum { .. }) => EXIT_CHECKSUM,
            CliError::Checkpoint(_) => EXIT_INPUT,
            CliError::Train(TrainError::Corpus(c)) => match c {
                CorpusError::Io { .. } | CorpusError::Parse { .. } => EXIT_INPUT,
                _ => EXIT_CORPUS,
            },
            CliError::Train(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Parser)]
#[command(name = "topicfuse", version, about = "Topic-fused transformer classification with cost accounting")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the topic model alone; writes nvdm.tfus and topics.txt.
    Pretrain,
    /// Fine-tune (or fit a baseline) for each seed; writes checkpoints,
    /// metrics streams and a summary.
    Train {
        /// Pretrained topic model, required by topic-using modes.
        #[arg(long)]
        nvdm: Option<PathBuf>,
        /// F1 of the reference run, for retention.
        #[arg(long)]
        reference_f1: Option<f64>,
    },
    /// Macro-F1 of a trained model on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Predicted label and the key terms of the dominant topic.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Plain-text document.
        #[arg(long)]
        doc: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_m: usize,
    },
    /// Predicted epoch cost across sequence lengths as CSV.
    Profile {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        lengths: Vec<u64>,
        /// Batches per epoch.
        #[arg(long, default_value_t = 1)]
        batches: u64,
        /// Topic vocabulary size Z.
        #[arg(long, default_value_t = 2000)]
        vocab_size: u64,
        /// Seconds per operation, e.g. from a calibrated run.
        #[arg(long, default_value_t = 1e-9)]
        seconds_per_op: f64,
    },
    /// Pareto frontier of (F1, hours) over metrics streams.
    Pareto {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// The effective configuration: the `--config` file (or defaults) with
/// `--seed` applied.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut c = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new("."));
            Config::parse(&text, base).map_err(|source| CliError::Config {
                path: path.clone(),
                source,
            })?
        }
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seeds = vec![s];
    }
    Ok(c)
}

/// Runs one parsed command and returns what it prints.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Pretrain => commands::pretrain(&resolve_config(cli)?, out),
        Command::Train { nvdm, reference_f1 } => {
            commands::train(&resolve_config(cli)?, nvdm.as_deref(), *reference_f1, out)
        }
        Command::Eval { model, split } => {
            let cfg = cli.config.as_ref().map(|_| resolve_config(cli)).transpose()?;
            commands::eval(model, *split, cfg.as_ref())
        }
        Command::Explain { model, doc, top_m } => commands::explain(model, doc, *top_m),
        Command::Profile {
            lengths,
            batches,
            vocab_size,
            seconds_per_op,
        } => commands::profile(&resolve_config(cli)?, lengths, *batches, *vocab_size, *seconds_per_op, out),
        Command::Pareto { files } => commands::pareto(files, out),
    }
}

/// Parses `args`, runs the command, prints its output or error, and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
