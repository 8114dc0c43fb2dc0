//! Data preparation and training on synthetic flows.

use kandos_core::data::{self, synth_generate, CleanStats, FlowDataset, SynthConfig};
use kandos_core::model::{KanConfig, KanModel};
use kandos_core::training::{evaluate_loss, fit, train_epoch, AdamState, TrainConfig};
use statrs::distribution::{ContinuousCDF, Normal};

fn prepared(cfg: &SynthConfig) -> (FlowDataset, FlowDataset, CleanStats) {
    let ds = synth_generate(cfg).unwrap();
    let (train, test) = data::split(&ds, 0.2, cfg.seed).unwrap();
    let stats = CleanStats::fit(&train).unwrap();
    (stats.apply(&train).unwrap(), stats.apply(&test).unwrap(), stats)
}

#[test]
fn cleaned_training_set_is_near_centered() {
    let cfg = SynthConfig { samples_per_class: 2_000, seed: 3, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    let stats = CleanStats::fit(&ds).unwrap();
    let clean = stats.apply(&ds).unwrap();
    let f = clean.n_features();
    for j in 0..f {
        let mean = (0..clean.n_rows()).map(|i| clean.features[i * f + j]).sum::<f64>() / clean.n_rows() as f64;
        assert!(mean.abs() <= 0.05, "feature {j} mean {mean}");
    }
    assert!(clean.features.iter().all(|v| v.is_finite() && v.abs() <= 3.0 + 1e-12));
}

/// Accuracy of the rule that projects onto the generator's own mean difference.
fn oracle_discriminant_accuracy(ds: &FlowDataset, cfg: &SynthConfig) -> f64 {
    let stats = CleanStats::fit(ds).unwrap();
    let informative = cfg.informative_count();
    let f = ds.n_features();
    // Direction of the class-1 shift per informative feature, recovered from the
    // class means of the standardized data.
    let clean = stats.apply(ds).unwrap();
    let mut diff = vec![0.0; informative];
    let (n0, n1) = clean.class_counts();
    for i in 0..clean.n_rows() {
        let w = if clean.labels[i] == 1 { 1.0 / n1 as f64 } else { -1.0 / n0 as f64 };
        for j in 0..informative {
            diff[j] += w * clean.features[i * f + j];
        }
    }
    let sign: Vec<f64> = diff.iter().map(|d| d.signum()).collect();
    let mid: f64 = diff.iter().map(|d| d.abs()).sum::<f64>() / 2.0;
    let mut mean0 = 0.0;
    for i in 0..clean.n_rows() {
        if clean.labels[i] == 0 {
            mean0 += (0..informative).map(|j| sign[j] * clean.features[i * f + j]).sum::<f64>();
        }
    }
    let cut = mean0 / n0 as f64 + mid;
    let correct = (0..clean.n_rows())
        .filter(|&i| {
            let proj: f64 = (0..informative).map(|j| sign[j] * clean.features[i * f + j]).sum();
            u8::from(proj >= cut) == clean.labels[i]
        })
        .count();
    correct as f64 / clean.n_rows() as f64
}

#[test]
fn separated_classes_reach_bayes_level_accuracy() {
    let cfg = SynthConfig { seed: 12, ..SynthConfig::default() };
    let bayes = Normal::standard().cdf(cfg.mahalanobis_distance() / 2.0);
    assert!(bayes >= 0.99);
    let acc = oracle_discriminant_accuracy(&synth_generate(&cfg).unwrap(), &cfg);
    assert!(acc >= 0.99, "oracle accuracy {acc}");
}

#[test]
fn zero_separation_is_a_coin_flip() {
    let cfg = SynthConfig { samples_per_class: 5_000, class_separation: 0.0, seed: 2, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    assert_eq!(Normal::standard().cdf(cfg.mahalanobis_distance() / 2.0), 0.5);
    // Fit a nearest-class-mean rule on the first half, score the second half.
    let (train, test) = data::split(&ds, 0.5, 1).unwrap();
    let f = ds.n_features();
    let mut means = [vec![0.0; f], vec![0.0; f]];
    let (n0, n1) = train.class_counts();
    for i in 0..train.n_rows() {
        let c = train.labels[i] as usize;
        let n = if c == 1 { n1 } else { n0 } as f64;
        for j in 0..f {
            means[c][j] += train.features[i * f + j] / n;
        }
    }
    let stats = CleanStats::fit(&train).unwrap();
    let dist = |row: &[f64], c: usize| -> f64 {
        (0..f).map(|j| ((row[j] - means[c][j]) / stats.std[j]).powi(2)).sum()
    };
    let correct = (0..test.n_rows())
        .filter(|&i| u8::from(dist(test.row(i), 1) < dist(test.row(i), 0)) == test.labels[i])
        .count();
    let acc = correct as f64 / test.n_rows() as f64;
    assert!((acc - 0.5).abs() <= 0.02, "accuracy {acc}");
}

#[test]
fn correlation_ranks_informative_features_first() {
    let cfg = SynthConfig { seed: 4, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    let table = kandos_core::eval::feature_correlation(&ds).unwrap();
    let informative = cfg.informative_count();
    for c in &table.ranked[..informative] {
        assert!(c.feature.starts_with("informative_"), "{} ranked too high", c.feature);
    }
    let b = table.bands;
    assert_eq!(b.strong + b.moderate + b.weak + b.constant, cfg.feature_count);
}

#[test]
fn epoch_step_count_and_determinism() {
    let cfg = SynthConfig { samples_per_class: 157, feature_count: 6, seed: 1, ..SynthConfig::default() };
    let (train, _, _) = prepared(&cfg);
    let train = train.select_rows(&(0..250).collect::<Vec<_>>());
    let model = KanModel::new(KanConfig { layer_dims: vec![6, 4, 1], ..KanConfig::default() }).unwrap();
    let tc = TrainConfig::default();

    let mut a = model.clone();
    let mut sa = AdamState::new(&a);
    let stats = train_epoch(&mut a, &train, &mut sa, &tc, 0).unwrap();
    assert_eq!(stats.steps, 3);
    assert_eq!(sa.t, 3);

    let mut b = model.clone();
    let mut sb = AdamState::new(&b);
    train_epoch(&mut b, &train, &mut sb, &tc, 0).unwrap();
    assert_eq!(a, b);

    let empty = train.select_rows(&[]);
    assert!(train_epoch(&mut b, &empty, &mut sb, &tc, 1).is_err());
}

#[test]
fn first_epoch_reduces_loss() {
    let cfg = SynthConfig { seed: 5, ..SynthConfig::default() };
    let (train, _, _) = prepared(&cfg);
    let mut model = KanModel::new(KanConfig { seed: 5, ..KanConfig::default() }).unwrap();
    let (initial, _) = evaluate_loss(&model, &train).unwrap();
    let mut state = AdamState::new(&model);
    train_epoch(&mut model, &train, &mut state, &TrainConfig::default(), 0).unwrap();
    let (after, _) = evaluate_loss(&model, &train).unwrap();
    assert!(after < initial, "{after} >= {initial}");
}

#[test]
fn fit_bookkeeping() {
    let cfg = SynthConfig { samples_per_class: 100, feature_count: 8, seed: 6, ..SynthConfig::default() };
    let (train, test, _) = prepared(&cfg);
    let model = KanModel::new(KanConfig { layer_dims: vec![8, 4, 1], ..KanConfig::default() }).unwrap();

    let (same, history) = fit(model.clone(), &train, &test, &TrainConfig { max_epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(same, model);
    assert!(history.is_empty());

    let (_, history) = fit(model.clone(), &train, &test, &TrainConfig { max_epochs: 7, ..TrainConfig::default() }).unwrap();
    assert_eq!(history.len(), 7);
    assert_eq!(history.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
    assert!(history.records.iter().all(|r| r.train_loss >= 0.0 && r.test_loss >= 0.0));

    let (_, sparse) = fit(model, &train, &test, &TrainConfig { max_epochs: 7, eval_every: 3, ..TrainConfig::default() }).unwrap();
    assert_eq!(sparse.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![3, 6, 7]);
}

#[test]
fn training_is_deterministic() {
    let cfg = SynthConfig { samples_per_class: 150, feature_count: 10, seed: 7, ..SynthConfig::default() };
    let (train, test, _) = prepared(&cfg);
    let model = KanModel::new(KanConfig { layer_dims: vec![10, 5, 1], seed: 3, ..KanConfig::default() }).unwrap();
    let tc = TrainConfig { max_epochs: 4, shuffle_seed: 9, ..TrainConfig::default() };
    let (a, ha) = fit(model.clone(), &train, &test, &tc).unwrap();
    let (b, hb) = fit(model, &train, &test, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_table(false), hb.to_table(false));
}

#[test]
fn synthetic_fit_generalizes() {
    let cfg = SynthConfig { seed: 11, ..SynthConfig::default() };
    let (train, test, _) = prepared(&cfg);
    let model = KanModel::new(KanConfig { seed: 11, ..KanConfig::default() }).unwrap();
    let tc = TrainConfig { max_epochs: 30, shuffle_seed: 11, ..TrainConfig::default() };
    let (_, history) = fit(model, &train, &test, &tc).unwrap();
    let last = history.last().unwrap();
    assert!(last.test_acc >= 0.98, "test accuracy {}", last.test_acc);
    assert!((last.train_acc - last.test_acc).abs() <= 0.02);
}
