//! Ranking metrics against brute-force recomputation.

use kandos_core::eval::{confusion, pr_ap, roc_auc, scalar_metrics, threshold_sweep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// P(score_pos > score_neg) + 0.5 * P(tie), over all pairs.
fn concordance_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Step-wise AP computed by counting, for each distinct threshold, how many rows
/// score at or above it.
fn brute_force_ap(labels: &[u8], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = labels.iter().zip(scores).filter(|(&y, &s)| y == 1 && s >= t).count() as f64;
        let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Random instance with both classes and deliberately coarse scores so ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<u8>, Vec<f64>) {
    loop {
        let n = rng.random_range(2..=max_n);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        let coarse = rng.random_bool(0.5);
        let scores = labels
            .iter()
            .map(|&y| {
                let s: f64 = rng.random_range(0.0..1.0) * 0.7 + 0.3 * f64::from(y) * rng.random_range(0.0..1.0);
                if coarse { (s * 10.0).round() / 10.0 } else { s }
            })
            .collect();
        return (labels, scores);
    }
}

#[test]
fn trapezoidal_auc_equals_concordance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (labels, scores) = random_instance(&mut rng, 200);
        let (_, auc) = roc_auc(&labels, &scores).unwrap();
        assert!((auc - concordance_auc(&labels, &scores)).abs() <= 1e-12);
    }
}

#[test]
fn fifty_point_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let labels: Vec<u8> = (0..50).map(|i| u8::from(i % 2 == 0)).collect();
    let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
    assert!((roc_auc(&labels, &scores).unwrap().1 - concordance_auc(&labels, &scores)).abs() <= 1e-12);
    assert!((pr_ap(&labels, &scores).unwrap().1 - brute_force_ap(&labels, &scores)).abs() <= 1e-12);
}

#[test]
fn ap_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (labels, scores) = random_instance(&mut rng, 200);
        let (_, ap) = pr_ap(&labels, &scores).unwrap();
        assert!((ap - brute_force_ap(&labels, &scores)).abs() <= 1e-12);
    }
}

#[test]
fn invariant_under_increasing_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (labels, scores) = random_instance(&mut rng, 150);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s * s * s).collect();
        let (_, a) = roc_auc(&labels, &scores).unwrap();
        let (_, b) = roc_auc(&labels, &warped).unwrap();
        assert!((a - b).abs() <= 1e-12);
        let (_, a) = pr_ap(&labels, &scores).unwrap();
        let (_, b) = pr_ap(&labels, &warped).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn roc_curve_is_monotone_from_origin_to_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (labels, scores) = random_instance(&mut rng, 120);
    let (curve, _) = roc_auc(&labels, &scores).unwrap();
    let p = &curve.points;
    assert_eq!((p[0].x, p[0].y), (0.0, 0.0));
    assert_eq!((p[p.len() - 1].x, p[p.len() - 1].y), (1.0, 1.0));
    assert!(p.windows(2).all(|w| w[0].x <= w[1].x && w[0].y <= w[1].y && w[0].threshold > w[1].threshold));
}

#[test]
fn sweep_rows_match_direct_confusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (labels, scores) = random_instance(&mut rng, 200);
    let sweep = threshold_sweep(&labels, &scores, 0.001).unwrap();
    for row in sweep.rows.iter().step_by(37) {
        let cm = confusion(&labels, &scores, row.threshold).unwrap();
        assert_eq!(cm, row.confusion);
        assert_eq!(scalar_metrics(&cm).unwrap(), row.metrics);
    }
    let best = sweep.rows.iter().map(|r| r.metrics.f1).fold(0.0, f64::max);
    assert_eq!(sweep.best_f1, best);
    let first_best = sweep.rows.iter().find(|r| r.metrics.f1 == best).unwrap();
    assert_eq!(sweep.best_threshold, first_best.threshold);
}

#[test]
fn sweep_enumeration_on_small_example() {
    let labels = [0u8, 0, 1, 1];
    let scores = [0.1, 0.4, 0.6, 0.9];
    let sweep = threshold_sweep(&labels, &scores, 0.001).unwrap();
    // Exhaustive: F1 is 1 exactly on grid points in (0.4, 0.6].
    let perfect: Vec<f64> = sweep.rows.iter().filter(|r| r.metrics.f1 == 1.0).map(|r| r.threshold).collect();
    assert_eq!(perfect.first().copied(), Some(0.401));
    assert_eq!(perfect.last().copied(), Some(0.6));
    assert_eq!(perfect.len(), 200);
    assert_eq!(sweep.best_threshold, 0.401);
}
