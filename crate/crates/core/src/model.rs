//! The KAN classifier.
//!
//! Every edge `(o, i)` of a layer carries a spline `s_oi` over the layer's grid and a
//! scale `w_oi`; neuron `o` outputs `bias_o + sum_i w_oi * s_oi(x_i)`. Layers compose
//! directly, with the splines supplying all nonlinearity. The final layer has one
//! neuron whose raw output is the logit.
//!
//! Parameters are stored as `f32`; arithmetic runs in `f64`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CleanStats;
use crate::encoding::{hex_f32, hex_f64, hex_f64_scalar};
use crate::error::{KanError, Result};
use crate::spline::{SplineGrid, MAX_DEGREE};

pub const FORMAT_VERSION: u64 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Rows scored together by [`KanModel::logits`].
pub const INFERENCE_BLOCK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanConfig {
    pub layer_dims: Vec<usize>,
    pub grid_intervals: usize,
    pub degree: usize,
    pub grid_range: (f64, f64),
    pub seed: u64,
}

impl Default for KanConfig {
    /// 78 flow features, hidden widths 32 and 16, one output; cubic splines on
    /// 5 intervals over `[-3, 3]`.
    fn default() -> Self {
        Self { layer_dims: vec![78, 32, 16, 1], grid_intervals: 5, degree: 3, grid_range: (-3.0, 3.0), seed: 0 }
    }
}

impl KanConfig {
    pub fn with_dims(layer_dims: Vec<usize>) -> Self {
        Self { layer_dims, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(KanError::InvalidConfig("need at least an input and an output dimension".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(KanError::InvalidConfig("layer dimensions must be positive".into()));
        }
        if *self.layer_dims.last().unwrap() != 1 {
            return Err(KanError::InvalidConfig("binary classifier needs a single output neuron".into()));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.grid_range.0, self.grid_range.1, self.grid_intervals, self.degree)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Edge splines per layer.
    pub fn edge_counts(&self) -> Vec<usize> {
        self.layer_dims.windows(2).map(|w| w[0] * w[1]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid: SplineGrid,
    /// `[out_dim][in_dim][basis_count]`
    pub coeffs: Vec<f32>,
    /// `[out_dim][in_dim]`
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
}

impl KanLayer {
    pub fn basis_count(&self) -> usize {
        self.grid.basis_count()
    }

    pub fn edge_count(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn edge_coeffs(&self, out: usize, input: usize) -> &[f32] {
        let nb = self.basis_count();
        let start = (out * self.in_dim + input) * nb;
        &self.coeffs[start..start + nb]
    }

    fn is_finite(&self) -> bool {
        self.coeffs.iter().chain(&self.scale).chain(&self.bias).all(|v| v.is_finite())
    }

    /// Local basis of every input of one row: first index and `k + 1` values.
    fn row_basis(&self, row: &[f64], first: &mut [u32], basis: &mut [f64]) {
        let w = self.grid.degree() + 1;
        for (i, &x) in row.iter().enumerate() {
            first[i] = self.grid.local_basis(x, &mut basis[i * w..(i + 1) * w]) as u32;
        }
    }

    fn row_output(&self, first: &[u32], basis: &[f64], out: &mut [f64]) {
        let nb = self.basis_count();
        let w = self.grid.degree() + 1;
        for (o, y) in out.iter_mut().enumerate() {
            let mut acc = f64::from(self.bias[o]);
            for i in 0..self.in_dim {
                let c = &self.coeffs[(o * self.in_dim + i) * nb + first[i] as usize..][..w];
                let b = &basis[i * w..(i + 1) * w];
                let s: f64 = c.iter().zip(b).map(|(&c, &b)| f64::from(c) * b).sum();
                acc += f64::from(self.scale[o * self.in_dim + i]) * s;
            }
            *y = acc;
        }
    }

    /// Layer outputs for a block of `rows` rows held input-major in
    /// `scratch.act` (entry `i * rows + r`); writes `scratch.next` output-major.
    /// Per row, terms are accumulated in the same order as [`Self::row_output`].
    fn block_output(&self, rows: usize, scratch: &mut InferenceScratch) {
        let w = self.grid.degree() + 1;
        let n = self.in_dim * rows;
        scratch.first.resize(n, 0);
        scratch.basis.resize(n * w, 0.0);
        for (at, &x) in scratch.act[..n].iter().enumerate() {
            scratch.first[at] = self.grid.local_basis(x, &mut scratch.basis[at * w..(at + 1) * w]) as u32;
        }
        scratch.next.clear();
        scratch.next.resize(self.out_dim * rows, 0.0);
        for o in 0..self.out_dim {
            let acc = &mut scratch.next[o * rows..(o + 1) * rows];
            acc.fill(f64::from(self.bias[o]));
            for i in 0..self.in_dim {
                let edge = self.edge_coeffs(o, i);
                let scale = f64::from(self.scale[o * self.in_dim + i]);
                let firsts = &scratch.first[i * rows..(i + 1) * rows];
                let basis = &scratch.basis[i * rows * w..(i + 1) * rows * w];
                for (r, a) in acc.iter_mut().enumerate() {
                    let c = &edge[firsts[r] as usize..][..w];
                    let b = &basis[r * w..(r + 1) * w];
                    let s: f64 = c.iter().zip(b).map(|(&c, &b)| f64::from(c) * b).sum();
                    *a += scale * s;
                }
            }
        }
    }
}

/// Per-layer values recorded by [`KanModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `[batch][in_dim]` layer inputs.
    pub inputs: Vec<f64>,
    /// `[batch][in_dim]` index of the first nonzero basis function.
    pub first: Vec<u32>,
    /// `[batch][in_dim][k + 1]`
    pub basis: Vec<f64>,
    /// `[batch][in_dim][k + 1]`
    pub basis_deriv: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    pub layers: Vec<LayerCache>,
}

/// Gradients shaped like each layer's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub coeffs: Vec<f64>,
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(model: &KanModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    coeffs: vec![0.0; l.coeffs.len()],
                    scale: vec![0.0; l.scale.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Tensors in canonical order: per layer coefficients, scales, biases.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.coeffs.as_slice(), l.scale.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.coeffs, &mut l.scale, &mut l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerParamCount {
    pub coeffs: usize,
    pub scales: usize,
    pub biases: usize,
}

impl LayerParamCount {
    pub fn total(&self) -> usize {
        self.coeffs + self.scales + self.biases
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub per_layer: Vec<LayerParamCount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanModel {
    pub config: KanConfig,
    pub layers: Vec<KanLayer>,
    pub clean_stats: Option<CleanStats>,
    pub decision_threshold: f64,
}

impl KanModel {
    /// Coefficients ~ N(0, (0.1 / sqrt(in_dim))^2), scales 1, biases 0.
    pub fn new(config: KanConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let nb = grid.basis_count();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let normal = Normal::new(0.0, 0.1 / (in_dim as f64).sqrt()).expect("positive std");
                let coeffs = (0..out_dim * in_dim * nb).map(|_| normal.sample(&mut rng) as f32).collect();
                KanLayer {
                    in_dim,
                    out_dim,
                    grid: grid.clone(),
                    coeffs,
                    scale: vec![1.0; out_dim * in_dim],
                    bias: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Self { config, layers, clean_stats: None, decision_threshold: DEFAULT_THRESHOLD })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn with_clean_stats(mut self, stats: CleanStats) -> Result<Self> {
        if stats.n_features() != self.input_dim() {
            return Err(KanError::SchemaMismatch(format!(
                "clean stats cover {} features, model takes {}",
                stats.n_features(),
                self.input_dim()
            )));
        }
        self.clean_stats = Some(stats);
        Ok(self)
    }

    fn check_batch(&self, batch: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if !batch.len().is_multiple_of(d) {
            return Err(KanError::ShapeMismatch(format!(
                "batch of {} values is not a whole number of {d}-wide rows",
                batch.len()
            )));
        }
        if let Some(pos) = batch.iter().position(|v| !v.is_finite()) {
            return Err(KanError::NonFiniteInput { row: pos / d, col: pos % d });
        }
        Ok(batch.len() / d)
    }

    /// Logits for a row-major batch, keeping what [`backward`](Self::backward) needs.
    pub fn forward(&self, batch: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let rows = self.check_batch(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = batch.to_vec();
        for layer in &self.layers {
            let w = layer.grid.degree() + 1;
            let n = rows * layer.in_dim;
            let mut first = vec![0u32; n];
            let mut basis = vec![0.0; n * w];
            let mut basis_deriv = vec![0.0; n * w];
            let mut next = vec![0.0; rows * layer.out_dim];
            for r in 0..rows {
                let row = &current[r * layer.in_dim..(r + 1) * layer.in_dim];
                let fr = &mut first[r * layer.in_dim..(r + 1) * layer.in_dim];
                let br = &mut basis[r * layer.in_dim * w..(r + 1) * layer.in_dim * w];
                layer.row_basis(row, fr, br);
                for (i, &x) in row.iter().enumerate() {
                    let at = (r * layer.in_dim + i) * w;
                    layer.grid.local_basis_deriv(x, &mut basis_deriv[at..at + w]);
                }
                layer.row_output(fr, br, &mut next[r * layer.out_dim..(r + 1) * layer.out_dim]);
            }
            caches.push(LayerCache { inputs: current, first, basis, basis_deriv });
            current = next;
        }
        Ok((current, ForwardCache { batch: rows, layers: caches }))
    }

    /// Logits of up to [`INFERENCE_BLOCK`] rows, appended to `out`.
    fn block_logits(&self, block: &[f64], scratch: &mut InferenceScratch, out: &mut Vec<f64>) {
        let d = self.input_dim();
        let rows = block.len() / d;
        scratch.act.clear();
        scratch.act.resize(rows * d, 0.0);
        for r in 0..rows {
            for i in 0..d {
                scratch.act[i * rows + r] = block[r * d + i];
            }
        }
        for layer in &self.layers {
            layer.block_output(rows, scratch);
            std::mem::swap(&mut scratch.act, &mut scratch.next);
        }
        out.extend_from_slice(&scratch.act[..rows]);
    }

    /// Logits without recording a cache. Rows are scored in blocks so each
    /// edge's coefficients are fetched once per block rather than once per row.
    pub fn logits(&self, batch: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_batch(batch)?;
        let d = self.input_dim();
        let mut scratch = InferenceScratch::default();
        let mut out = Vec::with_capacity(rows);
        for block in batch.chunks(INFERENCE_BLOCK * d) {
            self.block_logits(block, &mut scratch, &mut out);
        }
        Ok(out)
    }

    /// Sigmoid of the logits.
    pub fn predict_proba(&self, batch: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(batch)?.into_iter().map(sigmoid).collect())
    }

    /// [`predict_proba`](Self::predict_proba) with blocks scored on the rayon pool.
    /// Output order and values are identical to the sequential path.
    pub fn predict_proba_parallel(&self, batch: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let d = self.input_dim();
        let blocks: Vec<Vec<f64>> = batch
            .par_chunks(INFERENCE_BLOCK * d)
            .map_init(InferenceScratch::default, |scratch, block| {
                let mut out = Vec::with_capacity(block.len() / d);
                self.block_logits(block, scratch, &mut out);
                out
            })
            .collect();
        Ok(blocks.into_iter().flatten().map(sigmoid).collect())
    }

    /// Analytic gradients of a loss `L` given `dL/dlogit` per row, summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, dl_dlogit: &[f64]) -> Result<ParamGrads> {
        if cache.layers.len() != self.layers.len() {
            return Err(KanError::CacheMismatch(format!(
                "cache has {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if dl_dlogit.len() != cache.batch {
            return Err(KanError::CacheMismatch(format!(
                "{} upstream gradients for a batch of {}",
                dl_dlogit.len(),
                cache.batch
            )));
        }
        for (layer, lc) in self.layers.iter().zip(&cache.layers) {
            let w = layer.grid.degree() + 1;
            if lc.inputs.len() != cache.batch * layer.in_dim || lc.basis.len() != cache.batch * layer.in_dim * w {
                return Err(KanError::CacheMismatch("layer cache shape differs from model".into()));
            }
        }

        let rows = cache.batch;
        let mut grads = ParamGrads::zeros_like(self);
        let mut upstream = dl_dlogit.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let g = &mut grads.layers[li];
            let (din, dout) = (layer.in_dim, layer.out_dim);
            let nb = layer.basis_count();
            let w = layer.grid.degree() + 1;
            let mut downstream = vec![0.0; rows * din];
            for r in 0..rows {
                for o in 0..dout {
                    let go = upstream[r * dout + o];
                    if go == 0.0 {
                        continue;
                    }
                    g.bias[o] += go;
                    for i in 0..din {
                        let edge = o * din + i;
                        let first = lc.first[r * din + i] as usize;
                        let at = (r * din + i) * w;
                        let b = &lc.basis[at..at + w];
                        let db = &lc.basis_deriv[at..at + w];
                        let base = edge * nb + first;
                        let c = &layer.coeffs[base..base + w];
                        let mut s = 0.0;
                        let mut ds = 0.0;
                        for q in 0..w {
                            s += f64::from(c[q]) * b[q];
                            ds += f64::from(c[q]) * db[q];
                        }
                        let scale = f64::from(layer.scale[edge]);
                        g.scale[edge] += go * s;
                        let gs = go * scale;
                        for q in 0..w {
                            g.coeffs[base + q] += gs * b[q];
                        }
                        downstream[r * din + i] += gs * ds;
                    }
                }
            }
            upstream = downstream;
        }
        Ok(grads)
    }

    pub fn count_params(&self) -> ParamCount {
        let per_layer: Vec<LayerParamCount> = self
            .layers
            .iter()
            .map(|l| LayerParamCount { coeffs: l.coeffs.len(), scales: l.scale.len(), biases: l.bias.len() })
            .collect();
        ParamCount { trainable: per_layer.iter().map(LayerParamCount::total).sum(), per_layer }
    }

    /// Trainable tensors in canonical order: per layer coefficients, scales, biases.
    pub fn tensors(&self) -> impl Iterator<Item = &[f32]> {
        self.layers.iter().flat_map(|l| [l.coeffs.as_slice(), l.scale.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f32>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.coeffs, &mut l.scale, &mut l.bias])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_document()).map_err(|e| KanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| KanError::io(path, e))?;
        Self::from_document(&text)
    }

    /// Serializes to the model file document.
    pub fn to_document(&self) -> String {
        let payload = ModelPayload::from_model(self);
        let checksum = payload_checksum(&payload);
        let file = ModelFile { format_version: FORMAT_VERSION, checksum, payload };
        let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| KanError::CorruptFile(format!("not a model document: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| KanError::CorruptFile("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(KanError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| KanError::CorruptFile(format!("malformed document: {e}")))?;
        if payload_checksum(&file.payload) != file.checksum {
            return Err(KanError::CorruptFile("checksum mismatch".into()));
        }
        file.payload.into_model()
    }
}

#[derive(Default)]
struct InferenceScratch {
    act: Vec<f64>,
    next: Vec<f64>,
    first: Vec<u32>,
    basis: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    checksum: String,
    payload: ModelPayload,
}

#[derive(Serialize, Deserialize)]
struct GridRecord {
    range_min: f64,
    range_max: f64,
    intervals: usize,
    degree: usize,
    #[serde(with = "hex_f64")]
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    #[serde(with = "hex_f32")]
    coeffs: Vec<f32>,
    #[serde(with = "hex_f32")]
    scale: Vec<f32>,
    #[serde(with = "hex_f32")]
    bias: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ModelPayload {
    config: KanConfig,
    grid: GridRecord,
    layers: Vec<LayerRecord>,
    clean_stats: Option<CleanStats>,
    #[serde(with = "hex_f64_scalar")]
    decision_threshold: f64,
}

fn payload_checksum(payload: &ModelPayload) -> String {
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl ModelPayload {
    fn from_model(model: &KanModel) -> Self {
        let grid = &model.layers[0].grid;
        Self {
            config: model.config.clone(),
            grid: GridRecord {
                range_min: grid.range_min(),
                range_max: grid.range_max(),
                intervals: grid.intervals(),
                degree: grid.degree(),
                knots: grid.knots().to_vec(),
            },
            layers: model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    coeffs: l.coeffs.clone(),
                    scale: l.scale.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            clean_stats: model.clean_stats.clone(),
            decision_threshold: model.decision_threshold,
        }
    }

    fn into_model(self) -> Result<KanModel> {
        let corrupt = |m: String| KanError::CorruptFile(m);
        self.config.validate().map_err(|e| corrupt(format!("invalid config: {e}")))?;
        let grid = self.config.grid()?;
        if grid.knots() != self.grid.knots.as_slice()
            || grid.intervals() != self.grid.intervals
            || grid.degree() != self.grid.degree
            || grid.range_min() != self.grid.range_min
            || grid.range_max() != self.grid.range_max
        {
            return Err(corrupt("grid description disagrees with config".into()));
        }
        if grid.degree() > MAX_DEGREE {
            return Err(corrupt("unsupported degree".into()));
        }
        let dims = &self.config.layer_dims;
        if self.layers.len() != dims.len() - 1 {
            return Err(corrupt("layer count disagrees with config".into()));
        }
        let nb = grid.basis_count();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, rec) in self.layers.into_iter().enumerate() {
            let (in_dim, out_dim) = (dims[li], dims[li + 1]);
            if rec.in_dim != in_dim
                || rec.out_dim != out_dim
                || rec.coeffs.len() != in_dim * out_dim * nb
                || rec.scale.len() != in_dim * out_dim
                || rec.bias.len() != out_dim
            {
                return Err(corrupt(format!("layer {li} arrays do not match its dimensions")));
            }
            let layer = KanLayer { in_dim, out_dim, grid: grid.clone(), coeffs: rec.coeffs, scale: rec.scale, bias: rec.bias };
            if !layer.is_finite() {
                return Err(corrupt(format!("layer {li} holds non-finite parameters")));
            }
            layers.push(layer);
        }
        if let Some(stats) = &self.clean_stats {
            if stats.n_features() != dims[0] {
                return Err(corrupt("clean stats width disagrees with input dimension".into()));
            }
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(corrupt("decision threshold outside (0, 1)".into()));
        }
        Ok(KanModel {
            config: self.config,
            layers,
            clean_stats: self.clean_stats,
            decision_threshold: self.decision_threshold,
        })
    }
}
