//! Command-line front end: argument parsing, config merging, and the
//! train / evaluate / predict / profile / correlate / synth commands.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kandos_core::profile::{BenchOptions, DEFAULT_BATCH_SIZES};

pub use commands::{cmd_correlate, cmd_evaluate, cmd_predict, cmd_profile, cmd_synth, cmd_train};
pub use config::RunConfig;
pub use error::CliError;

use commands::{EvalAssertions, ProfileOptions};

#[derive(Debug, Parser)]
#[command(name = "kandos", version, about = "Spline-edge network DoS detector for flow records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it with its history and summary.
    Train(TrainArgs),
    /// Score a labelled CSV and write metrics, curves and the threshold sweep.
    Evaluate(EvaluateArgs),
    /// Write a score and decision for every row of a CSV.
    Predict(PredictArgs),
    /// Report parameter counts and inference latency.
    Profile(ProfileArgs),
    /// Rank features by correlation with the label.
    Correlate(CorrelateArgs),
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
}

/// Options shared by every command that reads a `key = value` file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` file; explicit flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct SynthFlags {
    /// Rows per class for synthetic data.
    #[arg(long = "samples", alias = "samples-per-class")]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.samples_per_class {
            cfg.samples_per_class = v;
        }
        if let Some(v) = self.features {
            cfg.features = v;
        }
        if let Some(v) = self.separation {
            cfg.separation = v;
        }
        if let Some(v) = self.noise_fraction {
            cfg.noise_fraction = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Reset hyperparameters to the reference configuration (applied after --config).
    #[arg(long = "paper-defaults")]
    pub reference_defaults: bool,
    /// Labelled flow CSV; repeat to concatenate several files.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Train on generated data instead of CSV input.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, e.g. `32,16`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub grid_intervals: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Rows kept per class, or `none`.
    #[arg(long)]
    pub per_class_cap: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop after this many evaluations without test-loss improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Decision threshold stored in the model.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Overrides the model's decision threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub sweep_step: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub assert_accuracy: Option<f64>,
    #[arg(long)]
    pub assert_auc: Option<f64>,
    #[arg(long)]
    pub assert_f1: Option<f64>,
    /// Minimum F1 anywhere in the 0.2–0.8 threshold range.
    #[arg(long)]
    pub assert_sweep_f1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Column dropped from the features if present.
    #[arg(long, default_value = kandos_core::data::DEFAULT_LABEL_COLUMN)]
    pub label_column: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BATCH_SIZES.to_vec())]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = BenchOptions::default().repetitions)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score batches on all cores.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail if per-sample latency at the largest batch exceeds that at the smallest.
    #[arg(long)]
    pub assert_amortization: bool,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub synth: SynthFlags,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn base_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    Ok(cfg)
}

/// Merges defaults, config file, `--paper-defaults` and flags.
pub fn train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = base_config(&args.config)?;
    if args.reference_defaults {
        cfg.apply_reference_defaults();
    }
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs.clone();
    }
    if args.synthetic {
        cfg.synthetic = true;
    }
    args.synth.apply(&mut cfg);
    if let Some(v) = &args.label_column {
        cfg.label_column = v.clone();
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden_dims = v.clone();
    }
    if let Some(v) = args.grid_intervals {
        cfg.grid_intervals = v;
    }
    if let Some(v) = args.degree {
        cfg.degree = v;
    }
    if let Some(v) = args.test_fraction {
        cfg.test_fraction = v;
    }
    if let Some(v) = &args.per_class_cap {
        cfg.set("per_class_cap", v)?;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = Some(v);
    }
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    Ok(cfg)
}

/// Runs a parsed command line; the returned text goes to stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = train_config(&args)?;
            let outcome = cmd_train(&cfg, &args.out)?;
            Ok(outcome.summary)
        }
        Command::Evaluate(args) => {
            let mut cfg = base_config(&args.config)?;
            cfg.inputs = args.inputs.clone();
            if let Some(v) = &args.label_column {
                cfg.label_column = v.clone();
            }
            if let Some(v) = args.sweep_step {
                cfg.sweep_step = v;
            }
            let assertions = EvalAssertions {
                accuracy: args.assert_accuracy,
                auc: args.assert_auc,
                f1: args.assert_f1,
                sweep_f1: args.assert_sweep_f1,
            };
            let outcome = cmd_evaluate(&args.model, &cfg, args.threshold, &args.out, &assertions)?;
            Ok(outcome.report.to_text())
        }
        Command::Predict(args) => {
            let rows = cmd_predict(&args.model, &args.input, &args.label_column, args.threshold, &args.out)?;
            let positives = rows.iter().filter(|(_, d)| *d == 1).count();
            Ok(format!("rows = {}\npredicted_attack = {positives}\n", rows.len()))
        }
        Command::Profile(args) => {
            let opts = ProfileOptions {
                batch_sizes: args.batch_sizes.clone(),
                bench: BenchOptions { repetitions: args.repetitions, seed: args.seed, parallel: args.parallel },
                assert_amortization: args.assert_amortization,
            };
            cmd_profile(&args.model, &opts, &args.out)?;
            std::fs::read_to_string(args.out.join(commands::PROFILE_FILE))
                .map_err(|e| CliError::io(args.out.join(commands::PROFILE_FILE), e))
        }
        Command::Correlate(args) => {
            let mut cfg = base_config(&args.config)?;
            cfg.inputs = args.inputs.clone();
            if let Some(v) = &args.label_column {
                cfg.label_column = v.clone();
            }
            let table = cmd_correlate(&cfg, &args.out)?;
            Ok(commands::band_summary(&table))
        }
        Command::Synth(args) => {
            let mut cfg = base_config(&args.config)?;
            args.synth.apply(&mut cfg);
            let ds = cmd_synth(&cfg, &args.out)?;
            Ok(format!("rows = {}\nfeatures = {}\n", ds.n_rows(), ds.n_features()))
        }
    }
}
