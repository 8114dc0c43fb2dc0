//! One function per subcommand. Each writes its outputs into a directory (or
//! file) and returns the in-memory results for callers that want them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kandos_core::data::{self, LabelMapping, Provenance};
use kandos_core::eval::feature_correlation;
use kandos_core::profile::{bench_inference, bench_table, BenchOptions};
use kandos_core::training::fit;
use kandos_core::{
    CleanStats, CorrelationTable, EvalReport, FlowDataset, KanError, KanModel, ParamReport, ResourceReport,
    TrainingHistory,
};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.kan.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TEST_SPLIT_FILE: &str = "test_split.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const ROC_FILE: &str = "roc.csv";
pub const PR_FILE: &str = "pr.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PROFILE_FILE: &str = "profile.txt";
pub const LATENCY_FILE: &str = "latency.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const BANDS_FILE: &str = "bands.txt";

/// Band sizes reported for the Wednesday capture: strong, moderate, weak.
pub const REFERENCE_BANDS: (usize, usize, usize) = (20, 10, 29);

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

/// Loads and concatenates labelled CSVs; all files must share one header.
pub fn load_labelled(paths: &[PathBuf], label_column: &str) -> Result<FlowDataset, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("no input files given".into()));
    }
    for p in paths {
        require_file(p)?;
    }
    let mapping = LabelMapping::default();
    let mut merged: Option<FlowDataset> = None;
    for p in paths {
        let ds = data::map_labels(&data::load_csv(p, label_column)?, &mapping)?;
        match merged.as_mut() {
            None => merged = Some(ds),
            Some(m) => {
                if m.feature_names != ds.feature_names {
                    return Err(KanError::SchemaMismatch(format!("{} has different columns", p.display())).into());
                }
                m.features.extend_from_slice(&ds.features);
                m.labels.extend_from_slice(&ds.labels);
            }
        }
    }
    Ok(merged.expect("at least one input"))
}

fn clean_for_model(model: &KanModel, ds: &FlowDataset) -> Result<FlowDataset, CliError> {
    match &model.clean_stats {
        Some(stats) => Ok(stats.apply(ds)?),
        None => {
            if ds.n_features() != model.input_dim() {
                return Err(KanError::SchemaMismatch(format!(
                    "model expects {} features, data has {}",
                    model.input_dim(),
                    ds.n_features()
                ))
                .into());
            }
            Ok(ds.clone())
        }
    }
}

fn load_model(path: &Path) -> Result<KanModel, CliError> {
    require_file(path)?;
    Ok(KanModel::load(path)?)
}

/// Results of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: KanModel,
    pub history: TrainingHistory,
    pub report: EvalReport,
    pub summary: String,
}

/// load → map labels → balance → split → fit cleaning on train → train → save.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    cfg.validate_for_training()?;
    let full = if cfg.synthetic {
        data::synth_generate(&cfg.synth_config())?
    } else {
        load_labelled(&cfg.inputs, &cfg.label_column)?
    };
    create_dir(out)?;

    let balanced = data::balance(&full, cfg.per_class_cap, cfg.seed)?;
    let (raw_train, raw_test) = data::split(&balanced, cfg.test_fraction, cfg.seed)?;
    let stats = CleanStats::fit(&raw_train)?;
    let train = stats.apply(&raw_train)?;
    let test = stats.apply(&raw_test)?;

    let mut model = KanModel::new(cfg.kan_config(train.n_features()))?;
    model.decision_threshold = cfg.threshold;
    let (model, history) = fit(model, &train, &test, &cfg.train_config())?;
    let model = model.with_clean_stats(stats)?;

    let scores = model.predict_proba(&test.features)?;
    let report = EvalReport::compute(&test.labels, &scores, model.decision_threshold, cfg.sweep_step)?;

    model.save(out.join(MODEL_FILE))?;
    write_text(&out.join(HISTORY_FILE), &history.to_table(false))?;
    write_text(&out.join(TIMINGS_FILE), &history.timings_table())?;
    data::write_csv_file(&raw_test, out.join(TEST_SPLIT_FILE))?;

    let mut summary = String::from("[config]\n");
    summary.push_str(&cfg.to_text());
    summary.push_str("\n[data]\n");
    let provenance = match full.provenance {
        Provenance::Csv => "csv",
        Provenance::Synthetic => "synthetic",
    };
    let (full_neg, full_pos) = full.class_counts();
    let (bal_neg, bal_pos) = balanced.class_counts();
    let _ = writeln!(summary, "provenance = {provenance}");
    let _ = writeln!(summary, "features = {}", full.n_features());
    let _ = writeln!(summary, "loaded_rows = {} (benign {full_neg}, attack {full_pos})", full.n_rows());
    let _ = writeln!(summary, "balanced_rows = {} (benign {bal_neg}, attack {bal_pos})", balanced.n_rows());
    let _ = writeln!(summary, "train_rows = {}", train.n_rows());
    let _ = writeln!(summary, "test_rows = {}", test.n_rows());
    summary.push_str("\n[model]\n");
    let _ = writeln!(summary, "layer_dims = {:?}", model.config.layer_dims);
    let _ = writeln!(summary, "trainable_params = {}", model.count_params().trainable);
    summary.push_str("\n[training]\n");
    let _ = writeln!(summary, "evaluations = {}", history.len());
    if let Some(last) = history.last() {
        let _ = writeln!(summary, "last_epoch = {}", last.epoch);
        let _ = writeln!(summary, "train_loss = {:.6}\ntest_loss = {:.6}", last.train_loss, last.test_loss);
        let _ = writeln!(summary, "train_accuracy = {:.6}\ntest_accuracy = {:.6}", last.train_acc, last.test_acc);
    }
    summary.push_str("\n[metrics]\n");
    summary.push_str(&report.metric_lines());
    write_text(&out.join(SUMMARY_FILE), &summary)?;

    Ok(TrainOutcome { model, history, report, summary })
}

/// Minimum values checked after evaluation; a miss exits with status 1.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalAssertions {
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    /// Lowest sweep F1 over thresholds 0.2–0.8.
    pub sweep_f1: Option<f64>,
}

fn check_min(name: &str, value: f64, min: Option<f64>) -> Result<(), CliError> {
    match min {
        Some(m) if !(value >= m) => Err(CliError::Assertion(format!("{name} {value:.6} is below {m}"))),
        _ => Ok(()),
    }
}

impl EvalAssertions {
    pub fn check(&self, report: &EvalReport) -> Result<(), CliError> {
        check_min("accuracy", report.metrics.accuracy, self.accuracy)?;
        check_min("auc", report.auc, self.auc)?;
        check_min("f1", report.metrics.f1, self.f1)?;
        if self.sweep_f1.is_some() {
            let worst = report.sweep.min_f1_between(0.2, 0.8).unwrap_or(f64::NAN);
            check_min("sweep f1 over 0.2-0.8", worst, self.sweep_f1)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub report: EvalReport,
    pub correlation: CorrelationTable,
    pub text: String,
}

/// Scores a labelled dataset with a saved model and writes the report and
/// curve tables. `threshold` overrides the model's own decision threshold.
pub fn cmd_evaluate(
    model_path: &Path,
    cfg: &RunConfig,
    threshold: Option<f64>,
    out: &Path,
    assertions: &EvalAssertions,
) -> Result<EvaluateOutcome, CliError> {
    let model = load_model(model_path)?;
    let raw = load_labelled(&cfg.inputs, &cfg.label_column)?;
    let ds = clean_for_model(&model, &raw)?;
    let threshold = threshold.unwrap_or(model.decision_threshold);
    let scores = model.predict_proba(&ds.features)?;
    let report = EvalReport::compute(&ds.labels, &scores, threshold, cfg.sweep_step)?;
    let correlation = feature_correlation(&raw)?;
    create_dir(out)?;

    let mut text = String::from("[config]\n");
    let _ = writeln!(text, "model = {}", model_path.display());
    let inputs: Vec<String> = cfg.inputs.iter().map(|p| p.display().to_string()).collect();
    let _ = writeln!(text, "inputs = {}", inputs.join(","));
    let _ = writeln!(text, "label_column = {}", cfg.label_column);
    let _ = writeln!(text, "seed = {}", model.config.seed);
    let _ = writeln!(text, "sweep_step = {}", cfg.sweep_step);
    let _ = writeln!(text, "rows = {}", ds.n_rows());
    text.push('\n');
    text.push_str(&report.to_text());
    text.push_str("\n[correlation_bands]\n");
    text.push_str(&band_summary(&correlation));
    text.push_str("\n[correlation]\n");
    text.push_str(&correlation.to_table());

    write_text(&out.join(REPORT_FILE), &text)?;
    write_text(&out.join(ROC_FILE), &report.roc.to_table("fpr", "tpr"))?;
    write_text(&out.join(PR_FILE), &report.pr.to_table("recall", "precision"))?;
    write_text(&out.join(SWEEP_FILE), &report.sweep.to_table())?;
    assertions.check(&report)?;
    Ok(EvaluateOutcome { report, correlation, text })
}

/// Per-row scores and decisions, one output row per input row.
pub fn cmd_predict(
    model_path: &Path,
    input: &Path,
    label_column: &str,
    threshold: Option<f64>,
    out: &Path,
) -> Result<Vec<(f64, u8)>, CliError> {
    let model = load_model(model_path)?;
    require_file(input)?;
    let (raw, rows) = data::load_csv_unlabeled(input, label_column)?;
    let ds = FlowDataset::new(raw.feature_names, raw.features, vec![0; rows], Provenance::Csv)?;
    let ds = clean_for_model(&model, &ds)?;
    let threshold = threshold.unwrap_or(model.decision_threshold);
    let scores = model.predict_proba(&ds.features)?;
    let mut text = String::from("row,score,decision\n");
    let decisions: Vec<(f64, u8)> = scores.iter().map(|&s| (s, u8::from(s >= threshold))).collect();
    for (i, (s, d)) in decisions.iter().enumerate() {
        let _ = writeln!(text, "{i},{s},{d}");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &text)?;
    Ok(decisions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub batch_sizes: Vec<usize>,
    pub bench: BenchOptions,
    /// Fail unless the largest batch's per-sample latency is no worse than the smallest's.
    pub assert_amortization: bool,
}

pub fn cmd_profile(model_path: &Path, opts: &ProfileOptions, out: &Path) -> Result<Vec<ResourceReport>, CliError> {
    let model = load_model(model_path)?;
    let params = ParamReport::for_model(&model);
    let reports = bench_inference(&model, &opts.batch_sizes, &opts.bench)?;
    create_dir(out)?;
    let table = bench_table(&reports);
    let mut text = String::from("[config]\n");
    let _ = writeln!(text, "model = {}", model_path.display());
    let _ = writeln!(text, "layer_dims = {:?}", model.config.layer_dims);
    let sizes: Vec<String> = opts.batch_sizes.iter().map(ToString::to_string).collect();
    let _ = writeln!(text, "batch_sizes = {}", sizes.join(","));
    let _ = writeln!(text, "repetitions = {}", opts.bench.repetitions);
    let _ = writeln!(text, "seed = {}", opts.bench.seed);
    let _ = writeln!(text, "parallel = {}", opts.bench.parallel);
    text.push('\n');
    text.push_str(&params.to_text());
    text.push_str("\n[latency]\n");
    text.push_str(&table);
    write_text(&out.join(PROFILE_FILE), &text)?;
    write_text(&out.join(LATENCY_FILE), &table)?;
    if opts.assert_amortization {
        let smallest = reports.iter().min_by_key(|r| r.batch_size_used);
        let largest = reports.iter().max_by_key(|r| r.batch_size_used);
        if let (Some(s), Some(l)) = (smallest, largest) {
            if l.per_sample_latency_ms > s.per_sample_latency_ms {
                return Err(CliError::Assertion(format!(
                    "batch {} per-sample latency {:.6} ms exceeds batch {} at {:.6} ms",
                    l.batch_size_used, l.per_sample_latency_ms, s.batch_size_used, s.per_sample_latency_ms
                )));
            }
        }
    }
    Ok(reports)
}

/// Band counts next to the reference counts.
pub fn band_summary(table: &CorrelationTable) -> String {
    let b = &table.bands;
    let (rs, rm, rw) = REFERENCE_BANDS;
    let mut out = String::from("band,count,reference\n");
    let _ = writeln!(out, "strong,{},{rs}", b.strong);
    let _ = writeln!(out, "moderate,{},{rm}", b.moderate);
    let _ = writeln!(out, "weak,{},{rw}", b.weak);
    let _ = writeln!(out, "constant,{},", b.constant);
    out
}

pub fn cmd_correlate(cfg: &RunConfig, out: &Path) -> Result<CorrelationTable, CliError> {
    let ds = load_labelled(&cfg.inputs, &cfg.label_column)?;
    let table = feature_correlation(&ds)?;
    create_dir(out)?;
    let mut bands = String::from("[config]\n");
    let inputs: Vec<String> = cfg.inputs.iter().map(|p| p.display().to_string()).collect();
    let _ = writeln!(bands, "inputs = {}", inputs.join(","));
    let _ = writeln!(bands, "label_column = {}", cfg.label_column);
    let _ = writeln!(bands, "rows = {}\n", ds.n_rows());
    bands.push_str("[bands]\n");
    bands.push_str(&band_summary(&table));
    write_text(&out.join(CORRELATION_FILE), &table.to_table())?;
    write_text(&out.join(BANDS_FILE), &bands)?;
    Ok(table)
}

/// Writes a synthetic dataset CSV plus a `.cfg` sidecar with the generator settings.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<FlowDataset, CliError> {
    let synth = cfg.synth_config();
    let ds = data::synth_generate(&synth)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::write_csv_file(&ds, out)?;
    let mut sidecar = String::new();
    let _ = writeln!(sidecar, "seed = {}", synth.seed);
    let _ = writeln!(sidecar, "samples_per_class = {}", synth.samples_per_class);
    let _ = writeln!(sidecar, "features = {}", synth.feature_count);
    let _ = writeln!(sidecar, "separation = {}", synth.class_separation);
    let _ = writeln!(sidecar, "noise_fraction = {}", synth.noise_feature_fraction);
    write_text(&out.with_extension("cfg"), &sidecar)?;
    Ok(ds)
}
