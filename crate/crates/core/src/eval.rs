//! Detection metrics: confusion matrix, scalar ratios, ROC/AUC, PR/AP, threshold
//! sweeps, and feature-label correlation.
//!
//! Scores at or above a threshold are predicted positive.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::FlowDataset;
use crate::error::{KanError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn positives(&self) -> u64 {
        self.fn_ + self.tp
    }
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(KanError::LengthMismatch { expected: labels.len(), got: scores.len() });
    }
    Ok(())
}

pub fn confusion(labels: &[u8], scores: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    check_lengths(labels, scores)?;
    let mut cm = ConfusionMatrix::default();
    for (&y, &s) in labels.iter().zip(scores) {
        match (y == 1, s >= threshold) {
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (true, true) => cm.tp += 1,
        }
    }
    Ok(cm)
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct UndefinedRatios {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub fpr: bool,
    pub fnr: bool,
}

impl UndefinedRatios {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.fpr || self.fnr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub undefined: UndefinedRatios,
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scalar_metrics(cm: &ConfusionMatrix) -> Result<ScalarMetrics> {
    if cm.total() == 0 {
        return Err(KanError::EmptyMatrix);
    }
    let mut u = UndefinedRatios::default();
    let precision = ratio(cm.tp, cm.tp + cm.fp, &mut u.precision);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, &mut u.recall);
    let f1 = if u.precision || u.recall || precision + recall == 0.0 {
        u.f1 = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScalarMetrics {
        accuracy: (cm.tn + cm.tp) as f64 / cm.total() as f64,
        precision,
        recall,
        f1,
        fpr: ratio(cm.fp, cm.fp + cm.tn, &mut u.fpr),
        fnr: ratio(cm.fn_, cm.fn_ + cm.tp, &mut u.fnr),
        undefined: u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Score threshold producing this point; `+inf` for the ROC origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// `threshold,<x_name>,<y_name>` table with a header row.
    pub fn to_table(&self, x_name: &str, y_name: &str) -> String {
        let mut out = format!("threshold,{x_name},{y_name}\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.x, p.y);
        }
        out
    }
}

/// Cumulative (tp, fp) at each distinct score, walking scores from high to low.
fn descending_steps(labels: &[u8], scores: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, tp, fp));
    }
    steps
}

/// ROC curve over all distinct score thresholds and its trapezoidal area. Ties in
/// score form a single step, so the area equals the pairwise concordance
/// probability with ties counted as one half.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<(Curve, f64)> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(KanError::SingleClass);
    }
    let mut points = vec![CurvePoint { x: 0.0, y: 0.0, threshold: f64::INFINITY }];
    let mut auc = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for (s, tp, fp) in descending_steps(labels, scores) {
        let (x, y) = (fp as f64 / neg, tp as f64 / pos);
        auc += (x - px) * (y + py) / 2.0;
        points.push(CurvePoint { x, y, threshold: s });
        (px, py) = (x, y);
    }
    Ok((Curve { points }, auc))
}

/// Precision-recall points over distinct thresholds (x = recall, y = precision) and
/// step-wise average precision `sum (R_i - R_{i-1}) * P_i`.
pub fn pr_ap(labels: &[u8], scores: &[f64]) -> Result<(Curve, f64)> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    if pos == 0.0 {
        return Err(KanError::NoPositives);
    }
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (s, tp, fp) in descending_steps(labels, scores) {
        let recall = tp as f64 / pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint { x: recall, y: precision, threshold: s });
    }
    Ok((Curve { points }, ap))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: ScalarMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSweep {
    pub rows: Vec<SweepRow>,
    pub best_threshold: f64,
    pub best_f1: f64,
    pub best_accuracy: f64,
}

impl ThresholdSweep {
    pub fn to_table(&self) -> String {
        let mut out = String::from("threshold,accuracy,precision,recall,f1,fpr,fnr,tn,fp,fn,tp\n");
        for r in &self.rows {
            let m = &r.metrics;
            let c = &r.confusion;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.threshold, m.accuracy, m.precision, m.recall, m.f1, m.fpr, m.fnr, c.tn, c.fp, c.fn_, c.tp
            );
        }
        out
    }

    /// Smallest F1 over sweep thresholds within `[lo, hi]`.
    pub fn min_f1_between(&self, lo: f64, hi: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.threshold >= lo - 1e-12 && r.threshold <= hi + 1e-12)
            .map(|r| r.metrics.f1)
            .min_by(f64::total_cmp)
    }
}

/// Thresholds `step, 2*step, ...` strictly below 1. When `1/step` is an integer `n`
/// the grid is computed as `i/n` so decimal thresholds such as 0.737 are exact
/// nearest doubles.
pub fn sweep_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(KanError::InvalidStep(step));
    }
    let inv = 1.0 / step;
    let n = inv.round();
    if (inv - n).abs() < 1e-9 * n {
        let n = n as u64;
        return Ok((1..n).map(|i| i as f64 / n as f64).collect());
    }
    Ok((1..).map(|i| i as f64 * step).take_while(|&t| t < 1.0).collect())
}

/// Evaluates every grid threshold. Best F1 ties resolve to the smallest threshold.
pub fn threshold_sweep(labels: &[u8], scores: &[f64], step: f64) -> Result<ThresholdSweep> {
    check_lengths(labels, scores)?;
    let grid = sweep_grid(step)?;
    if labels.is_empty() {
        return Err(KanError::EmptyMatrix);
    }
    let mut pos_scores: Vec<f64> = labels.iter().zip(scores).filter(|(&y, _)| y == 1).map(|(_, &s)| s).collect();
    let mut neg_scores: Vec<f64> = labels.iter().zip(scores).filter(|(&y, _)| y != 1).map(|(_, &s)| s).collect();
    pos_scores.sort_by(f64::total_cmp);
    neg_scores.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(grid.len());
    for t in grid {
        let below_pos = pos_scores.partition_point(|&s| s < t) as u64;
        let below_neg = neg_scores.partition_point(|&s| s < t) as u64;
        let confusion = ConfusionMatrix {
            tn: below_neg,
            fp: neg_scores.len() as u64 - below_neg,
            fn_: below_pos,
            tp: pos_scores.len() as u64 - below_pos,
        };
        rows.push(SweepRow { threshold: t, confusion, metrics: scalar_metrics(&confusion)? });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.metrics.f1 > rows[best].metrics.f1 {
            best = i;
        }
    }
    let best_accuracy = rows.iter().map(|r| r.metrics.accuracy).fold(0.0, f64::max);
    Ok(ThresholdSweep {
        best_threshold: rows[best].threshold,
        best_f1: rows[best].metrics.f1,
        best_accuracy,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationBand {
    /// |r| > 0.5
    Strong,
    /// 0.3 < |r| <= 0.5
    Moderate,
    /// |r| <= 0.3
    Weak,
    /// Zero variance; r reported as 0.
    Constant,
}

impl CorrelationBand {
    pub fn of(r: f64) -> Self {
        let a = r.abs();
        if a > 0.5 {
            Self::Strong
        } else if a > 0.3 {
            Self::Moderate
        } else {
            Self::Weak
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Strong => "strong",
            Self::Moderate => "moderate",
            Self::Weak => "weak",
            Self::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub r: f64,
    pub band: CorrelationBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BandCounts {
    pub strong: usize,
    pub moderate: usize,
    pub weak: usize,
    pub constant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    /// Sorted by |r| descending; ties keep column order.
    pub ranked: Vec<FeatureCorrelation>,
    pub bands: BandCounts,
}

impl CorrelationTable {
    pub fn to_table(&self) -> String {
        let mut out = String::from("rank,feature,r,abs_r,band\n");
        for (i, c) in self.ranked.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i + 1, csv_field(&c.feature), c.r, c.r.abs(), c.band.name());
        }
        out
    }

    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranked.iter().position(|c| c.feature == feature)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pearson correlation of each feature with the 0/1 label. Missing cells are
/// skipped pairwise.
pub fn feature_correlation(ds: &FlowDataset) -> Result<CorrelationTable> {
    let n = ds.n_rows();
    let (neg, pos) = ds.class_counts();
    if n < 2 || neg == 0 || pos == 0 {
        return Err(KanError::ConstantLabels);
    }
    let f = ds.n_features();
    let mut ranked = Vec::with_capacity(f);
    let mut bands = BandCounts::default();
    for j in 0..f {
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (ds.features[i * f + j], f64::from(ds.labels[i])))
            .filter(|(x, _)| x.is_finite())
            .collect();
        let r = pearson(&pairs);
        let band = match r {
            Some(r) => CorrelationBand::of(r),
            None => CorrelationBand::Constant,
        };
        match band {
            CorrelationBand::Strong => bands.strong += 1,
            CorrelationBand::Moderate => bands.moderate += 1,
            CorrelationBand::Weak => bands.weak += 1,
            CorrelationBand::Constant => bands.constant += 1,
        }
        ranked.push(FeatureCorrelation { feature: ds.feature_names[j].clone(), r: r.unwrap_or(0.0), band });
    }
    ranked.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()));
    Ok(CorrelationTable { ranked, bands })
}

/// `None` when either side has zero variance.
fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let tol = 1e-12 * mx.abs();
    if sxx == 0.0 || syy == 0.0 || sxx / n <= tol * tol {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Everything `evaluate` reports for one scored dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: ScalarMetrics,
    pub auc: f64,
    pub ap: f64,
    pub roc: Curve,
    pub pr: Curve,
    pub sweep: ThresholdSweep,
}

impl EvalReport {
    pub fn compute(labels: &[u8], scores: &[f64], threshold: f64, sweep_step: f64) -> Result<Self> {
        let confusion = confusion(labels, scores, threshold)?;
        let metrics = scalar_metrics(&confusion)?;
        let (roc, auc) = roc_auc(labels, scores)?;
        let (pr, ap) = pr_ap(labels, scores)?;
        let sweep = threshold_sweep(labels, scores, sweep_step)?;
        Ok(Self { threshold, confusion, metrics, auc, ap, roc, pr, sweep })
    }

    /// Key-value lines shared by the training summary and the evaluation report.
    pub fn metric_lines(&self) -> String {
        let c = &self.confusion;
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "threshold = {}", self.threshold);
        let _ = writeln!(out, "tn = {}\nfp = {}\nfn = {}\ntp = {}", c.tn, c.fp, c.fn_, c.tp);
        let _ = writeln!(out, "accuracy = {:.6}\nprecision = {:.6}\nrecall = {:.6}\nf1 = {:.6}", m.accuracy, m.precision, m.recall, m.f1);
        let _ = writeln!(out, "fpr = {:.6}\nfnr = {:.6}", m.fpr, m.fnr);
        let _ = writeln!(out, "auc = {:.6}\nap = {:.6}", self.auc, self.ap);
        let _ = writeln!(out, "sweep_best_threshold = {}", self.sweep.best_threshold);
        let _ = writeln!(out, "sweep_best_f1 = {:.6}\nsweep_best_accuracy = {:.6}", self.sweep.best_f1, self.sweep.best_accuracy);
        if m.undefined.any() {
            let _ = writeln!(out, "undefined_ratios = {:?}", m.undefined);
        }
        out
    }

    /// Structured text report: metrics plus count and per-class percentage
    /// confusion matrices.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let mut out = String::from("[metrics]\n");
        out.push_str(&self.metric_lines());
        out.push_str("\n[confusion_counts]\n");
        let _ = writeln!(out, "actual \\ predicted,normal,attack");
        let _ = writeln!(out, "normal,{},{}", c.tn, c.fp);
        let _ = writeln!(out, "attack,{},{}", c.fn_, c.tp);
        out.push_str("\n[confusion_percent]\n");
        let _ = writeln!(out, "actual \\ predicted,normal,attack");
        let _ = writeln!(out, "normal,{:.1},{:.1}", pct(c.tn, c.negatives()), pct(c.fp, c.negatives()));
        let _ = writeln!(out, "attack,{:.1},{:.1}", pct(c.fn_, c.positives()), pct(c.tp, c.positives()));
        out
    }
}
