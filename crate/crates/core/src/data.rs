//! Flow-record ingestion and preparation: CSV loading, label mapping, class
//! balancing, stratified splitting, cleaning, and a synthetic generator.
//!
//! Missing cells are carried as `NaN` until [`CleanStats::apply`] imputes them.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoding::hex_f64;
use crate::error::{KanError, Result};

pub const DEFAULT_LABEL_COLUMN: &str = "Label";
pub const BENIGN_LABEL: &str = "BENIGN";
/// Generic attack label written by the synthetic generator and split exports.
pub const ATTACK_LABEL: &str = "ATTACK";
/// Per-class cap matching the size of the largest DoS class in the Wednesday capture.
pub const REFERENCE_PER_CLASS_CAP: usize = 231_073;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Csv,
    Synthetic,
}

/// A flow table as read from disk: features may contain missing cells and
/// labels are still strings.
#[derive(Debug, Clone)]
pub struct RawFlowTable {
    pub feature_names: Vec<String>,
    /// Row-major, `NaN` marks a missing cell.
    pub features: Vec<f64>,
    pub labels: Vec<String>,
}

impl RawFlowTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Distinct label strings with their counts, in first-seen order.
    pub fn label_counts(&self) -> Vec<(String, usize)> {
        let mut order = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for l in &self.labels {
            let c = counts.entry(l.as_str()).or_insert_with(|| {
                order.push(l.clone());
                0
            });
            *c += 1;
        }
        order.into_iter().map(|l| {
            let c = counts[l.as_str()];
            (l, c)
        }).collect()
    }
}

/// Binary-labelled feature matrix; label 1 is attack traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDataset {
    pub feature_names: Vec<String>,
    /// Row-major `[n_rows][n_features]`.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl FlowDataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<u8>,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.len() != labels.len() * feature_names.len() {
            return Err(KanError::ShapeMismatch(format!(
                "{} values for {} rows of {} features",
                features.len(),
                labels.len(),
                feature_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(KanError::InvalidConfig(format!("label {bad} is not binary")));
        }
        Ok(Self { feature_names, features, labels, provenance })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.n_features();
        &self.features[i * f..(i + 1) * f]
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FlowDataset {
        let f = self.n_features();
        let mut features = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        FlowDataset {
            feature_names: self.feature_names.clone(),
            features,
            labels,
            provenance: self.provenance,
        }
    }

    pub fn has_missing(&self) -> bool {
        self.features.iter().any(|v| !v.is_finite())
    }
}

fn is_missing_marker(cell: &str) -> bool {
    matches!(cell, "" | "NaN" | "Infinity" | "-Infinity")
}

/// Trims header names and makes duplicates unique by appending `.1`, `.2`, ...
/// (the CICIDS2017 CSVs repeat `Fwd Header Length`).
fn unique_names(raw: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for name in raw {
        let mut candidate = name.clone();
        let mut n = 1;
        while seen.contains(&candidate) {
            candidate = format!("{name}.{n}");
            n += 1;
        }
        seen.insert(candidate.clone());
        out.push(candidate);
    }
    out
}

/// Reads a flow CSV with a header row. Cells that are empty, `NaN`, `Infinity`
/// or `-Infinity` become missing; any other non-numeric cell is an error.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<RawFlowTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| KanError::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<RawFlowTable> {
    read_csv_with(reader, label_column, true)
}

/// Like [`load_csv`], but a missing label column is allowed; the returned table
/// then has no labels.
pub fn load_csv_unlabeled(path: impl AsRef<Path>, label_column: &str) -> Result<(RawFlowTable, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| KanError::io(path, e))?;
    let table = read_csv_with(file, label_column, false)?;
    let rows = if table.labels.is_empty() && table.n_features() > 0 {
        table.features.len() / table.n_features()
    } else {
        table.labels.len()
    };
    Ok((table, rows))
}

fn read_csv_with<R: Read>(reader: R, label_column: &str, require_label: bool) -> Result<RawFlowTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| KanError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers.iter().position(|h| h == label_column.trim());
    if require_label && label_idx.is_none() {
        return Err(KanError::MissingLabelColumn(label_column.trim().to_string()));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != label_idx).collect();
    let feature_names = unique_names(feature_cols.iter().map(|&c| headers[c].clone()));

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(KanError::Csv(e.to_string())),
        }
        for (fi, &c) in feature_cols.iter().enumerate() {
            let cell = record[c].trim();
            if is_missing_marker(cell) {
                features.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                Ok(_) => features.push(f64::NAN),
                Err(_) => {
                    return Err(KanError::UnparseableCell {
                        row,
                        column: feature_names[fi].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        if let Some(l) = label_idx {
            labels.push(record[l].trim().to_string());
        }
        row += 1;
    }
    Ok(RawFlowTable { feature_names, features, labels })
}

/// Writes a dataset in the layout [`read_csv`] accepts, labels rendered as
/// [`BENIGN_LABEL`] / [`ATTACK_LABEL`]. Missing cells are written as `NaN`.
pub fn write_csv<W: Write>(ds: &FlowDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| KanError::Csv(e.to_string());
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(DEFAULT_LABEL_COLUMN);
    w.write_record(&header).map_err(csv_err)?;
    let mut cells: Vec<String> = Vec::with_capacity(ds.n_features() + 1);
    for i in 0..ds.n_rows() {
        cells.clear();
        cells.extend(ds.row(i).iter().map(|v| if v.is_nan() { "NaN".to_string() } else { v.to_string() }));
        cells.push(if ds.labels[i] == 1 { ATTACK_LABEL } else { BENIGN_LABEL }.to_string());
        w.write_record(&cells).map_err(csv_err)?;
    }
    w.flush().map_err(|e| KanError::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_csv_file(ds: &FlowDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| KanError::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

/// Label string to class mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping(HashMap<String, u8>);

impl Default for LabelMapping {
    /// Benign traffic is class 0; the Wednesday DoS families, Heartbleed, and the
    /// generic [`ATTACK_LABEL`] are class 1.
    fn default() -> Self {
        let mut m = HashMap::new();
        m.insert(BENIGN_LABEL.to_string(), 0);
        for attack in ["DoS Hulk", "DoS GoldenEye", "DoS slowloris", "DoS Slowhttptest", "Heartbleed", ATTACK_LABEL]
        {
            m.insert(attack.to_string(), 1);
        }
        Self(m)
    }
}

impl LabelMapping {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u8)>,
        S: Into<String>,
    {
        Self(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, label: &str) -> Option<u8> {
        self.0.get(label.trim()).copied()
    }
}

pub fn map_labels(raw: &RawFlowTable, mapping: &LabelMapping) -> Result<FlowDataset> {
    let labels = raw
        .labels
        .iter()
        .map(|l| mapping.get(l).ok_or_else(|| KanError::UnmappedLabel(l.clone())))
        .collect::<Result<Vec<u8>>>()?;
    FlowDataset::new(raw.feature_names.clone(), raw.features.clone(), labels, Provenance::Csv)
}

fn class_indices(ds: &FlowDataset) -> [Vec<usize>; 2] {
    let mut idx = [Vec::new(), Vec::new()];
    for (i, &l) in ds.labels.iter().enumerate() {
        idx[l as usize].push(i);
    }
    idx
}

/// Subsamples both classes without replacement to `min(count0, count1, cap)`
/// rows each. Selected rows keep their original relative order.
pub fn balance(ds: &FlowDataset, per_class_cap: Option<usize>, seed: u64) -> Result<FlowDataset> {
    let mut idx = class_indices(ds);
    if idx[0].is_empty() || idx[1].is_empty() {
        return Err(KanError::SingleClass);
    }
    let mut target = idx[0].len().min(idx[1].len());
    if let Some(cap) = per_class_cap {
        target = target.min(cap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(2 * target);
    for class in idx.iter_mut() {
        class.shuffle(&mut rng);
        keep.extend_from_slice(&class[..target]);
    }
    keep.sort_unstable();
    Ok(ds.select_rows(&keep))
}

/// Stratified split: each class contributes `round(count * test_fraction)` rows
/// to the test set.
pub fn split(ds: &FlowDataset, test_fraction: f64, seed: u64) -> Result<(FlowDataset, FlowDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(KanError::FractionOutOfRange(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut class in class_indices(ds) {
        class.shuffle(&mut rng);
        let n_test = (class.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&class[..n_test]);
        train.extend_from_slice(&class[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// Per-feature cleaning statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanStats {
    pub feature_names: Vec<String>,
    #[serde(with = "hex_f64")]
    pub median: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub mean: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub std: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub clip_low: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub clip_high: Vec<f64>,
}

/// Replacement standard deviation for constant features.
pub const STD_FLOOR: f64 = 1.0;
/// Multiple of the standard deviation beyond which values are clipped.
pub const CLIP_SIGMAS: f64 = 3.0;

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl CleanStats {
    /// Median over non-missing cells; mean and population standard deviation
    /// after median imputation; clip band at `mean ± 3·std`. Constant features get
    /// [`STD_FLOOR`].
    pub fn fit(train: &FlowDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(KanError::EmptyDataset);
        }
        let n = train.n_rows();
        let f = train.n_features();
        let mut stats = CleanStats {
            feature_names: train.feature_names.clone(),
            median: Vec::with_capacity(f),
            mean: Vec::with_capacity(f),
            std: Vec::with_capacity(f),
            clip_low: Vec::with_capacity(f),
            clip_high: Vec::with_capacity(f),
        };
        let mut column = Vec::with_capacity(n);
        for j in 0..f {
            column.clear();
            column.extend((0..n).map(|i| train.features[i * f + j]).filter(|v| v.is_finite()));
            if column.is_empty() {
                return Err(KanError::AllMissingFeature(train.feature_names[j].clone()));
            }
            let median = median_of(&mut column);
            let value = |i: usize| {
                let v = train.features[i * f + j];
                if v.is_finite() { v } else { median }
            };
            let mean = (0..n).map(value).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (value(i) - mean).powi(2)).sum::<f64>() / n as f64;
            let mut std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                std = STD_FLOOR;
            }
            stats.median.push(median);
            stats.mean.push(mean);
            stats.std.push(std);
            stats.clip_low.push(mean - CLIP_SIGMAS * std);
            stats.clip_high.push(mean + CLIP_SIGMAS * std);
        }
        Ok(stats)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn check_schema(&self, feature_names: &[String]) -> Result<()> {
        if feature_names.len() != self.n_features() {
            return Err(KanError::SchemaMismatch(format!(
                "expected {} features, dataset has {}",
                self.n_features(),
                feature_names.len()
            )));
        }
        if let Some((a, b)) = self.feature_names.iter().zip(feature_names).find(|(a, b)| a != b) {
            return Err(KanError::SchemaMismatch(format!("expected feature '{a}', found '{b}'")));
        }
        Ok(())
    }

    /// Cleans one raw value of feature `j`: impute, clip, standardize.
    pub fn transform(&self, j: usize, v: f64) -> f64 {
        let v = if v.is_finite() { v } else { self.median[j] };
        let v = v.clamp(self.clip_low[j], self.clip_high[j]);
        (v - self.mean[j]) / self.std[j]
    }

    /// Imputes, clips, and standardizes every cell. Rows are never dropped.
    pub fn apply(&self, ds: &FlowDataset) -> Result<FlowDataset> {
        self.check_schema(&ds.feature_names)?;
        let f = self.n_features();
        let features = ds
            .features
            .iter()
            .enumerate()
            .map(|(idx, &v)| self.transform(idx % f, v))
            .collect();
        Ok(FlowDataset {
            feature_names: ds.feature_names.clone(),
            features,
            labels: ds.labels.clone(),
            provenance: ds.provenance,
        })
    }

    /// Cleans a bare row-major matrix (no labels) against this schema.
    pub fn apply_matrix(&self, features: &[f64]) -> Vec<f64> {
        let f = self.n_features();
        features.iter().enumerate().map(|(idx, &v)| self.transform(idx % f, v)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| KanError::CorruptFile(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples_per_class: usize,
    pub feature_count: usize,
    /// Distance between class means on each informative feature, in units of
    /// the within-class standard deviation.
    pub class_separation: f64,
    /// Share of features that carry no label information.
    pub noise_feature_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 1_000,
            feature_count: 78,
            class_separation: 6.0,
            noise_feature_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(KanError::InvalidConfig("samples_per_class must be at least 1".into()));
        }
        if self.feature_count == 0 {
            return Err(KanError::InvalidConfig("feature_count must be at least 1".into()));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(KanError::InvalidConfig("class_separation must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_feature_fraction) {
            return Err(KanError::InvalidConfig("noise_feature_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn noise_count(&self) -> usize {
        ((self.noise_feature_fraction * self.feature_count as f64).round() as usize).min(self.feature_count)
    }

    /// Informative features come first in column order.
    pub fn informative_count(&self) -> usize {
        self.feature_count - self.noise_count()
    }

    /// Mahalanobis distance between the class means. The Bayes-optimal accuracy
    /// for the balanced problem is `Phi(distance / 2)`.
    pub fn mahalanobis_distance(&self) -> f64 {
        self.class_separation * (self.informative_count() as f64).sqrt()
    }
}

/// Two Gaussian classes with independent unit-variance features, mapped to raw
/// units by a per-feature affine transform. On informative features the class
/// means differ by `class_separation` standard deviations (direction drawn per
/// feature); noise features are label-independent. Rows are shuffled.
pub fn synth_generate(config: &SynthConfig) -> Result<FlowDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let f = config.feature_count;
    let informative = config.informative_count();
    let scale: Vec<f64> = (0..f).map(|_| 10f64.powf(rng.random_range(-1.0..3.0))).collect();
    let offset: Vec<f64> = (0..f).map(|_| rng.random_range(0.0..100.0)).collect();
    let direction: Vec<f64> =
        (0..f).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();

    let n = 2 * config.samples_per_class;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for &slot in &order {
        let label = u8::from(slot >= config.samples_per_class);
        labels.push(label);
        for j in 0..f {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if j < informative && label == 1 { direction[j] * config.class_separation } else { 0.0 };
            features.push(offset[j] + scale[j] * (z + shift));
        }
    }
    let names = (0..f)
        .map(|j| if j < informative { format!("informative_{j:03}") } else { format!("noise_{j:03}") })
        .collect();
    FlowDataset::new(names, features, labels, Provenance::Synthetic)
}
