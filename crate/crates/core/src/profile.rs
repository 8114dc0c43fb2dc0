//! Model size accounting and inference benchmarking.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KanError, Result};
use crate::model::KanModel;

/// Reference figures reported for the original deployment, printed next to
/// measured values. They are not targets.
pub mod reference {
    pub const TOTAL_PARAMS: usize = 50_092;
    pub const TRAINABLE_PARAMS: usize = 42_336;
    pub const MODEL_SIZE_MB: f64 = 0.19;
    pub const LATENCY_MS: f64 = 2.00;
    pub const THROUGHPUT_PER_S: f64 = 500.0;
}

pub const BYTES_PER_PARAM: usize = 4;
pub const DEFAULT_BATCH_SIZES: [usize; 4] = [1, 10, 100, 1000];
const WARMUP_RUNS: usize = 2;

/// Size in MiB of `params` values stored as `f32`.
pub fn size_mb(params: usize) -> f64 {
    (params * BYTES_PER_PARAM) as f64 / (1u64 << 20) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub trainable: usize,
    pub model_size_mb: f64,
}

impl ParamReport {
    pub fn for_model(model: &KanModel) -> Self {
        let trainable = model.count_params().trainable;
        Self { trainable, model_size_mb: size_mb(trainable) }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[parameters]\nquantity,measured,reference\n");
        let _ = writeln!(out, "trainable_params,{},{}", self.trainable, reference::TRAINABLE_PARAMS);
        let _ = writeln!(out, "total_params,{},{}", self.trainable, reference::TOTAL_PARAMS);
        let _ = writeln!(out, "model_size_mb,{:.3},{:.2}", self.model_size_mb, reference::MODEL_SIZE_MB);
        let _ = writeln!(
            out,
            "reference_size_at_4_bytes_mb,{:.3},{:.2}",
            size_mb(reference::TOTAL_PARAMS),
            reference::MODEL_SIZE_MB
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    pub trainable_params: usize,
    pub model_size_mb: f64,
    pub batch_size_used: usize,
    pub repetitions: usize,
    pub threads: usize,
    /// Median wall-clock time of one batch.
    pub median_batch_ms: f64,
    pub mean_batch_ms: f64,
    /// `median_batch_ms / batch_size_used`
    pub per_sample_latency_ms: f64,
    pub mean_per_sample_ms: f64,
    /// `batch_size_used / median batch seconds`
    pub throughput_samples_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub seed: u64,
    /// Score rows on the rayon pool instead of the calling thread.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repetitions: 20, seed: 0, parallel: false }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `predict_proba` on seeded random inputs in `[-3, 3]` for each batch size.
/// Warm-up runs are excluded.
pub fn bench_inference(model: &KanModel, batch_sizes: &[usize], options: &BenchOptions) -> Result<Vec<ResourceReport>> {
    if options.repetitions < 3 {
        return Err(KanError::InvalidConfig("benchmark needs at least 3 repetitions".into()));
    }
    if let Some(&bad) = batch_sizes.iter().find(|&&b| b == 0) {
        return Err(KanError::InvalidBatchSize(bad));
    }
    let params = ParamReport::for_model(model);
    let d = model.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let threads = if options.parallel { rayon::current_num_threads() } else { 1 };
    let mut reports = Vec::with_capacity(batch_sizes.len());
    for &batch in batch_sizes {
        let inputs: Vec<f64> = (0..batch * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let run = |x: &[f64]| if options.parallel { model.predict_proba_parallel(x) } else { model.predict_proba(x) };
        for _ in 0..WARMUP_RUNS {
            std::hint::black_box(run(&inputs)?);
        }
        let mut times_ms = Vec::with_capacity(options.repetitions);
        for _ in 0..options.repetitions {
            let start = Instant::now();
            std::hint::black_box(run(std::hint::black_box(&inputs))?);
            times_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
        let med = median(&mut times_ms).max(1e-9);
        reports.push(ResourceReport {
            trainable_params: params.trainable,
            model_size_mb: params.model_size_mb,
            batch_size_used: batch,
            repetitions: options.repetitions,
            threads,
            median_batch_ms: med,
            mean_batch_ms: mean,
            per_sample_latency_ms: med / batch as f64,
            mean_per_sample_ms: mean / batch as f64,
            throughput_samples_per_s: batch as f64 / (med / 1e3),
        });
    }
    Ok(reports)
}

/// Benchmark rows with the reference latency and throughput in trailing columns.
pub fn bench_table(reports: &[ResourceReport]) -> String {
    let mut out = String::from(
        "batch_size,repetitions,threads,median_batch_ms,mean_batch_ms,per_sample_latency_ms,mean_per_sample_ms,throughput_samples_per_s,reference_latency_ms,reference_throughput_per_s\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.1},{:.2},{:.0}",
            r.batch_size_used,
            r.repetitions,
            r.threads,
            r.median_batch_ms,
            r.mean_batch_ms,
            r.per_sample_latency_ms,
            r.mean_per_sample_ms,
            r.throughput_samples_per_s,
            reference::LATENCY_MS,
            reference::THROUGHPUT_PER_S
        );
    }
    out
}
