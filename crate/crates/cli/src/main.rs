//! `drugsent`: prepare, train, evaluate, compare and report.
//!
//! Exit status: 0 success, 2 usage or config error, 3 data error (missing
//! or malformed inputs), 4 runtime or training error.

mod commands;
mod config;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use drugsent::analysis::{Bucket, ModelNames, Severity};
use drugsent::{DataError, EncodeError, EvalError, ModelError};

use crate::commands::{CompareArgs, EvaluateArgs, PrepareArgs, ReportInput, TrainArgs, UsageError};
use crate::config::ConfigError;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "drugsent", version, about = "Three-class sentiment benchmark for drug reviews")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and bin the raw review files into prepared train/test files.
    Prepare {
        #[arg(long)]
        train_file: PathBuf,
        #[arg(long)]
        test_file: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Stratified fraction of each split to keep.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Drop unparseable rows with a warning instead of failing.
        #[arg(long)]
        skip_bad_rows: bool,
    },
    /// Train one model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Prepared training file; overrides data.train.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory; overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model on a prepared file.
    Evaluate {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Name recorded in the report; defaults to the model kind.
        #[arg(long)]
        model_id: Option<String>,
    },
    /// Partition two models' predictions and write a triage report.
    Compare {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "model_a")]
        name_a: String,
        #[arg(long, default_value = "model_b")]
        name_b: String,
        /// Keep only rows of this severity (severe or ordinary).
        #[arg(long)]
        severity: Option<Severity>,
        /// Keep only rows in these buckets (repeatable). Without --severity
        /// or --bucket every bucket except both_right is kept.
        #[arg(long = "bucket")]
        buckets: Vec<Bucket>,
    },
    /// Summarize a reviewed triage file or tabulate evaluation reports.
    Report(ReportArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["triage", "metrics"])))]
struct ReportArgs {
    /// Triage TSV with a filled pattern_tag column.
    #[arg(long)]
    triage: Option<PathBuf>,
    /// Evaluation report files, one table row each.
    #[arg(long, num_args = 1..)]
    metrics: Vec<PathBuf>,
    /// Markdown output file.
    #[arg(long)]
    out: PathBuf,
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Prepare {
            train_file,
            test_file,
            out,
            fraction,
            seed,
            skip_bad_rows,
        } => commands::prepare(PrepareArgs {
            train_file: &train_file,
            test_file: &test_file,
            out: &out,
            fraction,
            seed,
            skip_bad_rows,
        }),
        Command::Train { config, data, out } => commands::train_cmd(TrainArgs {
            config: &config,
            data: data.as_deref(),
            out: out.as_deref(),
        }),
        Command::Evaluate {
            model_dir,
            data,
            out,
            split,
            model_id,
        } => commands::evaluate(EvaluateArgs {
            model_dir: &model_dir,
            data: &data,
            out: &out,
            split: &split,
            model_id: model_id.as_deref(),
        }),
        Command::Compare {
            model_a,
            model_b,
            data,
            out,
            name_a,
            name_b,
            severity,
            buckets,
        } => commands::compare(CompareArgs {
            model_a: &model_a,
            model_b: &model_b,
            data: &data,
            out: &out,
            names: ModelNames { a: name_a, b: name_b },
            severity,
            buckets,
        }),
        Command::Report(args) => {
            let input = match &args.triage {
                Some(path) => ReportInput::Triage(path),
                None => ReportInput::Metrics(&args.metrics),
            };
            commands::report(input, &args.out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return match e {
                ConfigError::Io { .. } => EXIT_DATA,
                ConfigError::Invalid { .. } => EXIT_USAGE,
            };
        }
        if cause.is::<DataError>() || cause.is::<EncodeError>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Config(_) => EXIT_USAGE,
                ModelError::CheckpointUnavailable { .. }
                | ModelError::Checkpoint { .. }
                | ModelError::Encode(_)
                | ModelError::Io { .. } => EXIT_DATA,
                ModelError::Shape(_) | ModelError::Training(_) => EXIT_RUNTIME,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::LengthMismatch(..) => EXIT_RUNTIME,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
