//! Analytic backward pass against finite differences of the batch loss.

use kandos_core::model::{KanConfig, KanModel, ParamGrads};
use kandos_core::training::bce_with_logits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random model with non-trivial scales, biases and coefficients so that every
/// spline interval and the cross-layer chain rule are exercised.
pub fn random_model(dims: Vec<usize>, seed: u64) -> KanModel {
    let mut m = KanModel::new(KanConfig { layer_dims: dims, seed, ..KanConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for layer in &mut m.layers {
        layer.coeffs.iter_mut().for_each(|c| *c = rng.random_range(-0.8..0.8));
        layer.scale.iter_mut().for_each(|s| *s = rng.random_range(0.5..1.5));
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    m
}

fn batch_loss(m: &KanModel, x: &[f64], y: &[u8]) -> f64 {
    bce_with_logits(&m.logits(x).unwrap(), y).unwrap().0
}

/// Largest relative error over all parameters. Parameters are `f32`, so each
/// perturbation uses the exactly representable step actually taken.
pub fn max_relative_error(m: &KanModel, x: &[f64], y: &[u8], h: f64) -> f64 {
    let (logits, cache) = m.forward(x).unwrap();
    let (_, dl) = bce_with_logits(&logits, y).unwrap();
    let analytic = m.backward(&cache, &dl).unwrap();
    let analytic: Vec<Vec<f64>> = analytic.tensors().map(<[f64]>::to_vec).collect();

    let mut probe = m.clone();
    let mut worst = 0.0f64;
    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        for j in 0..analytic[t].len() {
            let original = probe.tensors().nth(t).unwrap()[j];
            let up = (f64::from(original) + h) as f32;
            let down = (f64::from(original) - h) as f32;
            probe.tensors_mut().nth(t).unwrap()[j] = up;
            let l_up = batch_loss(&probe, x, y);
            probe.tensors_mut().nth(t).unwrap()[j] = down;
            let l_down = batch_loss(&probe, x, y);
            probe.tensors_mut().nth(t).unwrap()[j] = original;
            let fd = (l_up - l_down) / (f64::from(up) - f64::from(down));
            let a = analytic[t][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn random_batch(rows: usize, width: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..rows * width).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = (0..rows).map(|_| u8::from(rng.random_bool(0.5))).collect();
    (x, y)
}

#[test]
fn finite_difference_agreement_over_seeds() {
    for seed in [1u64, 2, 3] {
        let m = random_model(vec![5, 4, 3, 1], seed);
        let (x, y) = random_batch(8, 5, 100 + seed);
        let err = max_relative_error(&m, &x, &y, 1e-5);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn gradients_add_over_samples() {
    let m = random_model(vec![3, 2, 1], 9);
    let (x, _) = random_batch(2, 3, 4);
    let upstream = [0.37, -1.25];
    let (_, cache) = m.forward(&x).unwrap();
    let both = m.backward(&cache, &upstream).unwrap();
    let mut sum = ParamGrads::zeros_like(&m);
    for r in 0..2 {
        let (_, c) = m.forward(&x[r * 3..(r + 1) * 3]).unwrap();
        sum.add_assign(&m.backward(&c, &upstream[r..r + 1]).unwrap());
    }
    for (a, b) in both.tensors().zip(sum.tensors()) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

#[test]
fn permuted_batch_gives_permuted_logits() {
    let m = random_model(vec![4, 3, 1], 21);
    let (x, _) = random_batch(6, 4, 8);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permuted: Vec<f64> = perm.iter().flat_map(|&r| x[r * 4..(r + 1) * 4].to_vec()).collect();
    let base = m.logits(&x).unwrap();
    let shuffled = m.logits(&permuted).unwrap();
    for (k, &r) in perm.iter().enumerate() {
        assert_eq!(shuffled[k], base[r]);
    }
}

