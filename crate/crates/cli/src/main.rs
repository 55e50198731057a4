//! Command-line front end.
//!
//! Subcommands cover the whole pipeline: synthetic manifest generation,
//! labeling, both training stages, evaluation, ablation, and streaming
//! prediction. Every failure exits through one mapping: 2 for usage errors,
//! 3 for data errors, 4 for numeric failures, with a single JSON error line
//! on stderr.

mod commands;
mod predict;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmf2f_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: flags, config file, or option values. Exit 2.
    Usage(String),
    /// Unreadable or invalid input data. Exit 3.
    Data(String),
    /// Non-finite numerics. Exit 4.
    Numeric(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            CliError::Usage(d) | CliError::Data(d) | CliError::Numeric(d) => d,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match &e {
            CoreError::Config { .. } => CliError::Usage(e.to_string()),
            CoreError::NonFinite { .. } | CoreError::OracleTooLarge { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mmf2f",
    version,
    about = "Multi-modal turn-taking and backchannel prediction pipeline",
    after_help = "Path options also resolve from MMF2F_* environment variables and from the\n\
        --config file (flat key = value TOML). Precedence: flags, then environment\n\
        (paths only), then config file, then defaults.\n\
        Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled manifest plus a hidden generator record
    Gen(GenArgs),
    /// Apply the word-level annotation rules to a manifest
    Label(LabelArgs),
    /// Stage 1: train uni-modal encoders with their own heads
    TrainUni(TrainUniArgs),
    /// Stage 2: train the fusion model jointly with random modality dropout
    TrainJoint(TrainJointArgs),
    /// Evaluate a checkpoint under one modality combination
    Eval(EvalArgs),
    /// Evaluate one checkpoint across modality combinations
    Ablate(AblateArgs),
    /// Read word-frame records from stdin, write per-frame predictions
    Predict(PredictArgs),
}

/// Options shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Flat key = value config file (TOML)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output manifest path (JSON Lines); the hidden record lands next to it
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total word-frame count
    #[arg(long)]
    n: Option<usize>,
    /// Words per conversation
    #[arg(long, value_name = "N")]
    words_per_conv: Option<usize>,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input manifest
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Output manifest; must not be the input
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainUniArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled manifest to train on
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Existing checkpoint to continue from (fresh bundle otherwise)
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Which encoder(s) to train
    #[arg(long, value_enum, default_value = "all")]
    modality: ModalityArg,
    /// Per-epoch metrics log (JSON Lines)
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Fusion rank for a fresh bundle
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Args)]
struct TrainJointArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled manifest to train on
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Stage-1 checkpoint to continue from
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Train without a stage-1 checkpoint
    #[arg(long)]
    from_scratch: bool,
    /// Per-epoch metrics log (JSON Lines)
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Random modality dropout probability
    #[arg(long)]
    p: Option<f64>,
    /// Fusion rank for a fresh bundle
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled manifest to evaluate on
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Modality combination as letters, e.g. T, TA, TAV
    #[arg(long, value_name = "LETTERS", default_value = "TAV")]
    modalities: String,
    /// Structured report output (one JSON line)
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled manifest to evaluate on
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// "all" or comma-separated combinations, e.g. T,TA,TAV
    #[arg(long, default_value = "all")]
    combos: String,
    /// Structured report output (one JSON line per combination)
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to predict with
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Clear utterance context after each Turn decision
    #[arg(long)]
    auto_reset: bool,
    /// Emit Turn only when p_turn exceeds this threshold
    #[arg(long, value_name = "P")]
    tau_turn: Option<f64>,
    /// Emit Backchannel only when p_bc exceeds this threshold
    #[arg(long, value_name = "P")]
    tau_bc: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModalityArg {
    Text,
    Audio,
    Video,
    All,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap already renders help/version to stdout with success.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Label(args) => commands::label(args),
        Command::TrainUni(args) => commands::train_uni(args),
        Command::TrainJoint(args) => commands::train_joint(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Predict(args) => commands::predict_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.kind(), "detail": err.detail() })
            );
            ExitCode::from(err.exit_code())
        }
    }
}
