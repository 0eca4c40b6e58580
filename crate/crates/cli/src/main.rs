use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apnea_core::config::RunConfig;
use apnea_core::Error;
use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "apnea", version, about = "Sleep apnea screening from respiratory audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct Common {
    /// Seed for every random draw of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Configuration file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` override; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (WAV files, annotations.csv, split.csv).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of records.
        #[arg(long)]
        records: Option<usize>,
        /// Record length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Convert a dataset into train/test spectrogram caches.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with WAVs, annotations.csv and split.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the model on the training cache.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score trained weights on the test cache.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding the caches (default: --out).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Weight file (default: <out>/weights.apwt).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Fixed decision threshold instead of a sweep.
        #[arg(long)]
        threshold: Option<f64>,
        /// Sweep objective: max_f1, recall_floor:R or precision_floor:P.
        #[arg(long)]
        objective: Option<String>,
    },
    /// Train and score the ablation configurations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Comma-separated subset of full,no_class_weighting,no_oversampling,no_regularization.
        #[arg(long)]
        runs: Option<String>,
    },
    /// Tabulate metrics files side by side.
    Report {
        #[command(flatten)]
        common: Common,
        /// metrics.json files to compare.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Row names, comma separated (default: parent directory of each file).
        #[arg(long)]
        names: Option<String>,
        /// Extra row from a published confusion matrix: NAME=tp,fn,fp,tn. Repeatable.
        #[arg(long = "reference", value_name = "NAME=TP,FN,FP,TN")]
        references: Vec<String>,
    },
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Directory holding the caches (default: --out).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// bce, weighted_bce or focal.
    #[arg(long)]
    loss: Option<String>,
    /// Focal exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Focal balance factor.
    #[arg(long)]
    alpha: Option<f64>,
    /// Maximum number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

fn base_config(common: &Common, extra: &[(&str, Option<String>)]) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_deref().map(|p: &Path| p.display().to_string())
}

fn train_overrides(t: &TrainFlags) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("run.cache_dir", path_str(&t.cache)),
        ("train.loss.kind", t.loss.clone()),
        ("train.loss.gamma", t.gamma.map(|v| v.to_string())),
        ("train.loss.alpha", t.alpha.map(|v| v.to_string())),
        ("train.epochs", t.epochs.map(|v| v.to_string())),
    ]
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common, records, duration } => {
            let cfg = base_config(
                &common,
                &[
                    ("synth.records", records.map(|v| v.to_string())),
                    ("synth.duration_s", duration.map(|v| v.to_string())),
                ],
            )?;
            commands::synth(&cfg, &common.out)
        }
        Command::Preprocess { common, data } => {
            let cfg = base_config(&common, &[("data.dir", path_str(&data))])?;
            commands::preprocess(&cfg, &common.out)
        }
        Command::Train { common, train } => {
            let cfg = base_config(&common, &train_overrides(&train))?;
            commands::train(&cfg, &common.out)
        }
        Command::Evaluate {
            common,
            cache,
            weights,
            threshold,
            objective,
        } => {
            let cfg = base_config(
                &common,
                &[
                    ("run.cache_dir", path_str(&cache)),
                    ("eval.threshold", threshold.map(|v| v.to_string())),
                    ("eval.objective", objective),
                ],
            )?;
            commands::evaluate(&cfg, &common.out, weights.as_deref())
        }
        Command::Ablate { common, train, runs } => {
            let mut extra = train_overrides(&train);
            extra.push(("eval.ablation_runs", runs));
            let cfg = base_config(&common, &extra)?;
            commands::ablate(&cfg, &common.out)
        }
        Command::Report {
            common,
            metrics,
            names,
            references,
        } => {
            let cfg = base_config(&common, &[])?;
            commands::report(&cfg, &common.out, &metrics, names.as_deref(), &references)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
