//! Binary cross-entropy, Adam, and the mini-batch training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FlowDataset;
use crate::error::{KanError, Result};
use crate::model::{sigmoid, KanModel, ParamGrads};

/// Rows per gradient work unit. Fixed so the reduction order, and therefore the
/// trained parameters, do not depend on the thread count.
const GRAD_CHUNK: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
    pub eval_every: usize,
    /// Stop after this many evaluations without a test-loss improvement. Off when `None`.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
            eval_every: 1,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KanError::InvalidConfig("learning_rate must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(KanError::InvalidConfig(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(KanError::InvalidConfig("adam_eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(KanError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(KanError::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of probabilities, and its gradient with respect to
/// the underlying logits, `(p - y) / B`. Probabilities are converted to logits so
/// the loss uses the same stable form as [`bce_with_logits`].
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(KanError::LengthMismatch { expected: labels.len(), got: probs.len() });
    }
    let logits: Vec<f64> = probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    let (loss, _) = bce_with_logits(&logits, labels)?;
    let n = probs.len() as f64;
    let grad = probs.iter().zip(labels).map(|(&p, &y)| (p - f64::from(y)) / n).collect();
    Ok((loss, grad))
}

/// Mean binary cross-entropy from raw logits:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))` per row. Finite for any finite logit.
pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(KanError::LengthMismatch { expected: labels.len(), got: logits.len() });
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let y = f64::from(y);
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}

/// First and second moment estimates for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &KanModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(model: &mut KanModel, grads: &ParamGrads, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    let shapes_match = model.tensors().count() == grads.tensors().count()
        && state.m.len() == grads.tensors().count()
        && model
            .tensors()
            .zip(grads.tensors())
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && g.len() == m.len());
    if !shapes_match {
        return Err(KanError::ShapeMismatch("gradients or optimizer state do not match the model".into()));
    }
    if !grads.all_finite() {
        return Err(KanError::NonFiniteGradient);
    }
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let lr = config.learning_rate;
    for (((p, g), m), v) in model.tensors_mut().zip(grads.tensors()).zip(&mut state.m).zip(&mut state.v) {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] = (f64::from(p[j]) - lr * m_hat / (v_hat.sqrt() + config.adam_eps)) as f32;
        }
    }
    Ok(())
}

/// Loss and gradients for a batch of rows, summed over fixed-size chunks in order.
pub fn batch_gradients(model: &KanModel, ds: &FlowDataset, rows: &[usize]) -> Result<(f64, usize, ParamGrads)> {
    let n = rows.len() as f64;
    let parts: Vec<Result<(f64, usize, ParamGrads)>> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let sub = ds.select_rows(chunk);
            let (logits, cache) = model.forward(&sub.features)?;
            let (loss, mut grad) = bce_with_logits(&logits, &sub.labels)?;
            // Rescale chunk-mean gradients to the full batch mean.
            let k = chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= k / n);
            let correct = logits.iter().zip(&sub.labels).filter(|(&z, &y)| u8::from(z >= 0.0) == y).count();
            Ok((loss * k, correct, model.backward(&cache, &grad)?))
        })
        .collect();
    let mut total = ParamGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for part in parts {
        let (l, c, g) = part?;
        loss_sum += l;
        correct += c;
        total.add_assign(&g);
    }
    Ok((loss_sum / n, correct, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean loss over the epoch's mini-batches, as seen during the updates.
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
}

/// Row order for an epoch: a permutation drawn from the ChaCha stream selected by
/// `(shuffle_seed, epoch)`.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over the training set with one Adam step per mini-batch; the final
/// short batch is kept.
pub fn train_epoch(
    model: &mut KanModel,
    train: &FlowDataset,
    state: &mut AdamState,
    config: &TrainConfig,
    epoch: u64,
) -> Result<EpochStats> {
    config.validate()?;
    if train.is_empty() {
        return Err(KanError::EmptyDataset);
    }
    if train.n_features() != model.input_dim() {
        return Err(KanError::SchemaMismatch(format!(
            "training set has {} features, model takes {}",
            train.n_features(),
            model.input_dim()
        )));
    }
    let order = epoch_order(train.n_rows(), config.shuffle_seed, epoch);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut steps = 0;
    for batch in order.chunks(config.batch_size) {
        let (loss, c, grads) = batch_gradients(model, train, batch)?;
        adam_step(model, &grads, state, config)?;
        loss_sum += loss * batch.len() as f64;
        correct += c;
        steps += 1;
    }
    let n = train.n_rows() as f64;
    Ok(EpochStats { loss: loss_sum / n, accuracy: correct as f64 / n, steps })
}

/// Mean BCE and accuracy (threshold 0.5) of the model on a cleaned dataset.
pub fn evaluate_loss(model: &KanModel, ds: &FlowDataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(KanError::EmptyDataset);
    }
    let logits: Vec<f64> = ds
        .features
        .par_chunks(4096 * ds.n_features().max(1))
        .map(|block| model.logits(block))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let (loss, _) = bce_with_logits(&logits, &ds.labels)?;
    let correct = logits.iter().zip(&ds.labels).filter(|(&z, &y)| u8::from(z >= 0.0) == y).count();
    Ok((loss, correct as f64 / ds.n_rows() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Comma-separated table, one row per recorded epoch. The wall-clock column is
    /// optional so that the table can be compared byte-for-byte across runs.
    pub fn to_table(&self, with_seconds: bool) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,train_acc,test_acc");
        out.push_str(if with_seconds { ",seconds\n" } else { "\n" });
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.test_loss, r.train_acc, r.test_acc);
            if with_seconds {
                let _ = write!(out, ",{:.6}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    /// `epoch,seconds` table.
    pub fn timings_table(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.6}", r.epoch, r.seconds);
        }
        out
    }
}

/// Trains for up to `max_epochs` epochs, recording post-epoch train and test loss
/// and accuracy every `eval_every` epochs. Returns the final-epoch model.
pub fn fit(
    mut model: KanModel,
    train: &FlowDataset,
    test: &FlowDataset,
    config: &TrainConfig,
) -> Result<(KanModel, TrainingHistory)> {
    config.validate()?;
    let mut history = TrainingHistory::default();
    if config.max_epochs == 0 {
        return Ok((model, history));
    }
    if train.feature_names != test.feature_names {
        return Err(KanError::SchemaMismatch("train and test feature names differ".into()));
    }
    let mut state = AdamState::new(&model);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut clock = Instant::now();
    for epoch in 0..config.max_epochs {
        train_epoch(&mut model, train, &mut state, config, epoch as u64)?;
        if (epoch + 1) % config.eval_every != 0 && epoch + 1 != config.max_epochs {
            continue;
        }
        let (train_loss, train_acc) = evaluate_loss(&model, train)?;
        let (test_loss, test_acc) = evaluate_loss(&model, test)?;
        let seconds = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        history.records.push(EpochRecord { epoch: epoch + 1, train_loss, test_loss, train_acc, test_acc, seconds });
        if let Some(patience) = config.patience {
            if test_loss < best {
                best = test_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KanConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bce_closed_forms() {
        let (l, g) = bce_loss(&[0.5], &[1]).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-12);
        let (l, _) = bce_loss(&[0.9], &[0]).unwrap();
        assert_abs_diff_eq!(l, -(0.1f64).ln(), epsilon = 1e-9);
        assert!(matches!(bce_loss(&[0.5, 0.5], &[1]), Err(KanError::LengthMismatch { .. })));
    }

    #[test]
    fn bce_stable_at_extreme_logits() {
        let (l, g) = bce_with_logits(&[100.0, -100.0, 100.0, -100.0], &[0, 1, 1, 0]).unwrap();
        assert!(l.is_finite());
        assert_abs_diff_eq!(l, 50.0, epsilon = 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bce_gradient_identity_and_finite_difference() {
        let z = [-2.3, -0.1, 0.0, 0.7, 4.2];
        let y = [0u8, 1, 1, 0, 1];
        let (_, g) = bce_with_logits(&z, &y).unwrap();
        for i in 0..z.len() {
            let expected = (1.0 / (1.0 + (-z[i]).exp()) - f64::from(y[i])) / z.len() as f64;
            assert_abs_diff_eq!(g[i], expected, epsilon = 1e-12);
            let h = 1e-6;
            let mut zp = z;
            zp[i] += h;
            let mut zm = z;
            zm[i] -= h;
            let fd = (bce_with_logits(&zp, &y).unwrap().0 - bce_with_logits(&zm, &y).unwrap().0) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
        }
    }

    fn tiny_model() -> KanModel {
        KanModel::new(KanConfig { layer_dims: vec![1, 1], grid_intervals: 1, degree: 0, ..KanConfig::default() }).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = KanModel::new(KanConfig { layer_dims: vec![3, 2, 1], seed: 5, ..KanConfig::default() }).unwrap();
        let before = m.clone();
        let mut state = AdamState::new(&m);
        let zeros = ParamGrads::zeros_like(&m);
        adam_step(&mut m, &zeros, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(m, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = tiny_model();
        let mut g = ParamGrads::zeros_like(&m);
        g.layers[0].bias[0] = 0.37;
        let mut state = AdamState::new(&m);
        let cfg = TrainConfig::default();
        adam_step(&mut m, &g, &mut state, &cfg).unwrap();
        let expected = -cfg.learning_rate * 0.37 / (0.37 + cfg.adam_eps);
        assert_abs_diff_eq!(f64::from(m.layers[0].bias[0]), expected, epsilon = 1e-9);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut m = tiny_model();
        let mut state = AdamState::new(&m);
        let mut g = ParamGrads::zeros_like(&m);
        g.layers[0].scale[0] = f64::NAN;
        assert!(matches!(adam_step(&mut m, &g, &mut state, &TrainConfig::default()), Err(KanError::NonFiniteGradient)));
        g.layers[0].scale = vec![0.0, 0.0];
        assert!(matches!(adam_step(&mut m, &g, &mut state, &TrainConfig::default()), Err(KanError::ShapeMismatch(_))));
    }

    #[test]
    fn adam_matches_scalar_simulation_on_quadratic() {
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut m = tiny_model();
        let mut state = AdamState::new(&m);

        // Independent scalar Adam on f(w) = (w - 3)^2, rounding w to f32 like the model.
        let (mut w, mut mm, mut vv) = (0.0f32, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let grad = 2.0 * (f64::from(w) - 3.0);
            mm = 0.9 * mm + 0.1 * grad;
            vv = 0.999 * vv + 0.001 * grad * grad;
            let step = 0.1 * (mm / (1.0 - 0.9f64.powi(t))) / ((vv / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            w = (f64::from(w) - step) as f32;

            let mut g = ParamGrads::zeros_like(&m);
            g.layers[0].bias[0] = 2.0 * (f64::from(m.layers[0].bias[0]) - 3.0);
            adam_step(&mut m, &g, &mut state, &cfg).unwrap();
        }
        assert_eq!(m.layers[0].bias[0], w);
        assert!((f64::from(w) - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 1, 0);
        assert_eq!(a, epoch_order(50, 1, 0));
        assert_ne!(a, epoch_order(50, 1, 1));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn history_tables() {
        let h = TrainingHistory {
            records: vec![EpochRecord { epoch: 1, train_loss: 0.5, test_loss: 0.25, train_acc: 0.75, test_acc: 1.0, seconds: 0.123 }],
        };
        assert_eq!(h.to_table(false), "epoch,train_loss,test_loss,train_acc,test_acc\n1,0.5,0.25,0.75,1\n");
        assert_eq!(
            h.to_table(true),
            "epoch,train_loss,test_loss,train_acc,test_acc,seconds\n1,0.5,0.25,0.75,1,0.123000\n"
        );
        assert_eq!(h.timings_table(), "epoch,seconds\n1,0.123000\n");
    }
}
