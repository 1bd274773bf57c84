//! `fraudforest` command-line pipeline.
//!
//! Exit codes: 0 on success, 1 when training or inference fails numerically,
//! 2 for bad inputs or configuration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fraudforest", version, about = "Fake-review detection with a neural autoencoder decision forest")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file with training settings (field names as in the config echo).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReviewFormat {
    Jsonl,
    Csv,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the labeled feature set from reviews and spam scores.
    Extract {
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: ReviewFormat,
        /// Column renames for delimited input, as `field=header`.
        #[arg(long = "column", value_name = "FIELD=HEADER")]
        columns: Vec<String>,
        /// Maximum reviews kept per user.
        #[arg(long, default_value_t = 20)]
        cap: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Screen every feature against the label.
    Analyze {
        /// Directory written by `extract`.
        #[arg(long)]
        data: PathBuf,
        /// Compare continuous features with the signed-rank test on trimmed
        /// pairs instead of the rank-sum test.
        #[arg(long)]
        paired: bool,
        /// Also write per-feature histogram CSVs with this many bins.
        #[arg(long)]
        histograms: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a seeded split and report held-out metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Fraction of rows used for training.
        #[arg(long, default_value_t = 0.8, conflicts_with = "train_count")]
        train_fraction: f64,
        /// Exact number of training rows.
        #[arg(long)]
        train_count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a saved model on a feature set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        positive_class: usize,
        /// `split.tsv` written by `train`; required for `--subset` other than all.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
        #[command(flatten)]
        common: Common,
    },
    /// Write predicted labels and probabilities for every row.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Held-out accuracy per feature scope and on the full feature set.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract {
            reviews,
            scores,
            format,
            columns,
            cap,
            common,
        } => commands::extract(&common, &reviews, &scores, format, &columns, cap),
        Command::Analyze {
            data,
            paired,
            histograms,
            common,
        } => commands::analyze(&common, &data, paired, histograms),
        Command::Train {
            data,
            train_fraction,
            train_count,
            common,
        } => commands::train(&common, &data, train_fraction, train_count),
        Command::Evaluate {
            model,
            data,
            positive_class,
            split,
            subset,
            common,
        } => commands::evaluate(&common, &model, &data, positive_class, split.as_deref(), subset),
        Command::Predict { model, data, common } => commands::predict(&common, &model, &data),
        Command::Ablate {
            data,
            train_fraction,
            common,
        } => commands::ablate(&common, &data, train_fraction),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
