mod common;

use common::*;
use glap_core::metrics::{auroc, classification_metrics, predictive_entropy, EvalBatch};
use proptest::prelude::*;
use rand::Rng;

fn brute_force_auroc(neg: &[f64], pos: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn four_bins_by_hand() {
    let rows = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.55, 0.45], vec![0.7, 0.3]];
    let b = EvalBatch::from_rows(&rows, vec![0, 1, 0, 0]).unwrap();
    let m = classification_metrics(&b);
    let tol = 1e-12;
    assert!((m.accuracy - 0.75).abs() < tol);
    assert!((m.confidence - 0.7375).abs() < tol);
    assert!((m.ece - 0.4125).abs() < tol, "{}", m.ece);
    assert!((m.mce - 0.8).abs() < tol);
    assert!((m.brier - 0.47125).abs() < tol);
    let nll = -(0.9f64.ln() + 0.2f64.ln() + 0.55f64.ln() + 0.7f64.ln()) / 4.0;
    assert!((m.nll - nll).abs() < tol);
}

#[test]
fn shared_bin_averages_before_gap() {
    // both rows in (0.7, 0.8]; one correct -> |0.5 - 0.775|
    let rows = vec![vec![0.8, 0.2], vec![0.25, 0.75]];
    let m = classification_metrics(&EvalBatch::from_rows(&rows, vec![0, 0]).unwrap());
    assert!((m.ece - 0.275).abs() < 1e-12);
    assert!((m.mce - 0.275).abs() < 1e-12);
}

#[test]
fn auroc_matches_pairwise_count() {
    let mut r = rng(1);
    for trial in 0..20 {
        // rounding creates ties on some trials
        let q = if trial % 2 == 0 { 1e6 } else { 10.0 };
        let neg: Vec<f64> = (0..100).map(|_| (r.random::<f64>() * q).round() / q).collect();
        let pos: Vec<f64> = (0..100)
            .map(|_| (r.random::<f64>().powf(0.5) * q).round() / q)
            .collect();
        let fast = auroc(&neg, &pos).unwrap();
        assert!((fast - brute_force_auroc(&neg, &pos)).abs() < 1e-12);
    }
}

#[test]
fn entropy_scores_separate_confident_from_uniform() {
    let confident = [vec![0.97, 0.01, 0.02], vec![0.02, 0.96, 0.02]];
    let vague = [vec![0.34, 0.33, 0.33], vec![0.5, 0.25, 0.25]];
    let neg: Vec<f64> = confident.iter().map(|p| predictive_entropy(p)).collect();
    let pos: Vec<f64> = vague.iter().map(|p| predictive_entropy(p)).collect();
    assert_eq!(auroc(&neg, &pos).unwrap(), 1.0);
}

fn prob_rows(o: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..40).prop_flat_map(move |m| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, o), m),
            prop::collection::vec(0..o, m),
        )
            .prop_map(|(raw, labels)| {
                let rows = raw
                    .into_iter()
                    .map(|r| {
                        let r: Vec<f64> = r.iter().map(|v| v + 1e-3).collect();
                        let s: f64 = r.iter().sum();
                        r.iter().map(|v| v / s).collect()
                    })
                    .collect();
                (rows, labels)
            })
    })
}

proptest! {
    #[test]
    fn calibration_bounds((rows, labels) in prob_rows(4)) {
        let m = classification_metrics(&EvalBatch::from_rows(&rows, labels).unwrap());
        prop_assert!(m.ece <= m.mce + 1e-15);
        prop_assert!(m.mce <= 1.0);
        prop_assert!(m.brier <= 2.0);
        prop_assert!(m.nll.is_finite() && m.nll >= 0.0);
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
    }

    #[test]
    fn auroc_invariant_under_monotone_maps(
        neg in prop::collection::vec(-5.0f64..5.0, 1..50),
        pos in prop::collection::vec(-5.0f64..5.0, 1..50),
    ) {
        let base = auroc(&neg, &pos).unwrap();
        let f = |v: &f64| (2.0 * v).exp() + 3.0;
        let mapped = auroc(&neg.iter().map(f).collect::<Vec<_>>(), &pos.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert!((base - mapped).abs() < 1e-12);
        prop_assert!((base - brute_force_auroc(&neg, &pos)).abs() < 1e-12);
    }
}
