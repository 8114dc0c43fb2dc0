//! Run configuration: defaults, `key = value` files, and command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! `--paper-defaults`, explicit flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kandos_core::data::{DEFAULT_LABEL_COLUMN, DEFAULT_TEST_FRACTION, REFERENCE_PER_CLASS_CAP};
use kandos_core::model::DEFAULT_THRESHOLD;
use kandos_core::{KanConfig, SynthConfig, TrainConfig};

use crate::error::CliError;

pub const DEFAULT_SWEEP_STEP: f64 = 0.001;

/// Everything a command may need, flattened so it can round-trip through a
/// `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds model init, shuffling, balancing, splitting, and synthesis.
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub grid_intervals: usize,
    pub degree: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eval_every: usize,
    pub patience: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub label_column: String,
    pub synthetic: bool,
    pub samples_per_class: usize,
    pub features: usize,
    pub separation: f64,
    pub noise_fraction: f64,
    pub test_fraction: f64,
    pub per_class_cap: Option<usize>,
    pub threshold: f64,
    pub sweep_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let kan = KanConfig::default();
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        Self {
            seed: 0,
            hidden_dims: kan.layer_dims[1..kan.layer_dims.len() - 1].to_vec(),
            grid_intervals: kan.grid_intervals,
            degree: kan.degree,
            grid_min: kan.grid_range.0,
            grid_max: kan.grid_range.1,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.max_epochs,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            eval_every: train.eval_every,
            patience: train.patience,
            inputs: Vec::new(),
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            synthetic: false,
            samples_per_class: synth.samples_per_class,
            features: synth.feature_count,
            separation: synth.class_separation,
            noise_fraction: synth.noise_feature_fraction,
            test_fraction: DEFAULT_TEST_FRACTION,
            per_class_cap: Some(REFERENCE_PER_CLASS_CAP),
            threshold: DEFAULT_THRESHOLD,
            sweep_step: DEFAULT_SWEEP_STEP,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>, CliError> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn optional_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one field by its file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, value)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, value)?,
            "grid_intervals" => self.grid_intervals = parse(key, value)?,
            "degree" => self.degree = parse(key, value)?,
            "grid_min" => self.grid_min = parse(key, value)?,
            "grid_max" => self.grid_max = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "patience" => self.patience = parse_optional(key, value)?,
            "inputs" => self.inputs = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "label_column" => self.label_column = value.to_string(),
            "synthetic" => self.synthetic = parse(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "noise_fraction" => self.noise_fraction = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "per_class_cap" => self.per_class_cap = parse_optional(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "sweep_step" => self.sweep_step = parse(key, value)?,
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Resets every model and optimiser hyperparameter, the split, and the class
    /// cap to the reference configuration; data sources and seeds are kept.
    pub fn apply_reference_defaults(&mut self) {
        let reference = RunConfig::default();
        self.hidden_dims = reference.hidden_dims;
        self.grid_intervals = reference.grid_intervals;
        self.degree = reference.degree;
        self.grid_min = reference.grid_min;
        self.grid_max = reference.grid_max;
        self.learning_rate = reference.learning_rate;
        self.batch_size = reference.batch_size;
        self.epochs = reference.epochs;
        self.adam_beta1 = reference.adam_beta1;
        self.adam_beta2 = reference.adam_beta2;
        self.adam_eps = reference.adam_eps;
        self.patience = reference.patience;
        self.test_fraction = reference.test_fraction;
        self.per_class_cap = reference.per_class_cap;
        self.threshold = reference.threshold;
    }

    /// `key = value` echo; feeding it back through [`RunConfig::apply_text`]
    /// reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("hidden_dims", join(&self.hidden_dims));
        kv("grid_intervals", self.grid_intervals.to_string());
        kv("degree", self.degree.to_string());
        kv("grid_min", self.grid_min.to_string());
        kv("grid_max", self.grid_max.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("patience", optional_text(self.patience));
        kv("inputs", self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
        kv("label_column", self.label_column.clone());
        kv("synthetic", self.synthetic.to_string());
        kv("samples_per_class", self.samples_per_class.to_string());
        kv("features", self.features.to_string());
        kv("separation", self.separation.to_string());
        kv("noise_fraction", self.noise_fraction.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("per_class_cap", optional_text(self.per_class_cap));
        kv("threshold", self.threshold.to_string());
        kv("sweep_step", self.sweep_step.to_string());
        out
    }

    /// Model config for data with `input_dim` features.
    pub fn kan_config(&self, input_dim: usize) -> KanConfig {
        let mut layer_dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        layer_dims.push(input_dim);
        layer_dims.extend_from_slice(&self.hidden_dims);
        layer_dims.push(1);
        KanConfig {
            layer_dims,
            grid_intervals: self.grid_intervals,
            degree: self.degree,
            grid_range: (self.grid_min, self.grid_max),
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            shuffle_seed: self.seed,
            eval_every: self.eval_every,
            patience: self.patience,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            samples_per_class: self.samples_per_class,
            feature_count: self.features,
            class_separation: self.separation,
            noise_feature_fraction: self.noise_fraction,
            seed: self.seed,
        }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate_for_training(&self) -> Result<(), CliError> {
        if !self.synthetic && self.inputs.is_empty() {
            return Err(CliError::Usage("training needs --input or --synthetic".into()));
        }
        if self.synthetic && !self.inputs.is_empty() {
            return Err(CliError::Usage("--input and --synthetic are mutually exclusive".into()));
        }
        for path in &self.inputs {
            if !path.is_file() {
                return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::Usage(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        self.kan_config(self.features.max(1)).validate()?;
        self.train_config().validate()?;
        if self.synthetic {
            self.synth_config().validate()?;
        }
        Ok(())
    }
}
