use npr_core::eval::{accuracy, average_precision, EvalReport, ReportRow, ScoredSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Precision at each positive, computed by counting for every positive how
/// many samples rank at or above it.
fn brute_force_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut positives = 0;
    for i in 0..n {
        if labels[i] != 1 {
            continue;
        }
        positives += 1;
        let rank = (0..n).filter(|&j| above(i, j)).count();
        let hits = (0..n).filter(|&j| labels[j] == 1 && above(i, j)).count();
        total += hits as f64 / rank as f64;
    }
    100.0 * total / positives as f64
}

fn scored(scores: &[f64], labels: &[u8]) -> ScoredSet {
    ScoredSet::new(scores.to_vec(), labels.to_vec(), "t").unwrap()
}

#[test]
fn ap_matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..=50);
        // Coarse scores make ties common.
        let levels = if rng.gen_bool(0.5) { 5 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let ap = average_precision(&scored(&scores, &labels)).unwrap();
        assert!((ap - brute_force_ap(&scores, &labels)).abs() <= 1e-9);
        checked += 1;
    }
}

#[test]
fn documented_examples() {
    assert_eq!(average_precision(&scored(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(), 100.0);
    let ap = average_precision(&scored(&[0.9, 0.7, 0.5, 0.3], &[1, 0, 1, 0])).unwrap();
    assert!((ap - 83.33).abs() <= 0.01);
    assert_eq!(accuracy(&scored(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]), 0.5).unwrap(), 100.0);
    assert_eq!(accuracy(&scored(&[0.5; 4], &[1, 1, 0, 0]), 0.5).unwrap(), 50.0);
    assert_eq!(accuracy(&scored(&[0.6, 0.4, 0.6, 0.4], &[1, 1, 0, 0]), 0.5).unwrap(), 50.0);
}

#[test]
fn mean_row_is_the_unweighted_mean() {
    let rows = vec![
        ReportRow {
            source: "a".into(),
            n_real: 10,
            n_fake: 10,
            acc: Some(90.0),
            ap: Some(97.5),
            invalid: None,
        },
        ReportRow {
            source: "b".into(),
            n_real: 300,
            n_fake: 7,
            acc: Some(61.2),
            ap: Some(70.1),
            invalid: None,
        },
        ReportRow {
            source: "c".into(),
            n_real: 4,
            n_fake: 0,
            acc: None,
            ap: None,
            invalid: Some("no fakes".into()),
        },
    ];
    let report = EvalReport::from_rows(rows);
    let mean = report.mean.unwrap();
    assert!((mean.acc - (90.0 + 61.2) / 2.0).abs() <= 1e-9);
    assert!((mean.ap - (97.5 + 70.1) / 2.0).abs() <= 1e-9);
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40)
        .prop_flat_map(|n| (prop::collection::vec(0u32..1024, n), prop::collection::vec(0u8..=1, n)))
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
        .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 / 1024.0).collect(), l))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ap_depends_only_on_ranks((scores, labels) in labeled_scores()) {
        let base = average_precision(&scored(&scores, &labels)).unwrap();
        for f in [|s: f64| s.powi(3), |s: f64| (4.0 * s).exp(), |s: f64| 2.0 * s - 7.0] {
            let moved: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert_eq!(average_precision(&scored(&moved, &labels)).unwrap(), base);
        }
    }

    #[test]
    fn ap_is_bounded_by_the_adversarial_ordering((scores, labels) in labeled_scores()) {
        let n = labels.len();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let neg = (n - pos) as f64;
        let ap = average_precision(&scored(&scores, &labels)).unwrap();
        prop_assert!(ap <= 100.0);
        // Negatives first: the k-th positive sits at rank neg + k.
        let floor = 100.0 * (1..=pos).map(|k| k as f64 / (neg + k as f64)).sum::<f64>() / pos as f64;
        prop_assert!(ap >= floor - 1e-9);
        if pos == 1 {
            prop_assert!((floor - 100.0 / n as f64).abs() <= 1e-9);
        }
        let worst: Vec<f64> = labels.iter().map(|&l| if l == 1 { 0.0 } else { 1.0 }).collect();
        let low = average_precision(&scored(&worst, &labels)).unwrap();
        prop_assert!((low - floor).abs() <= 1e-9);
        let best: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        prop_assert_eq!(average_precision(&scored(&best, &labels)).unwrap(), 100.0);
    }

    #[test]
    fn accuracy_threshold_symmetry((scores, labels) in labeled_scores(), t in 0u32..1024) {
        // Thresholds sit between score levels, so no score ties the threshold.
        let t = (2 * t + 1) as f64 / 2048.0;
        let flipped_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let flipped_labels: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let a = accuracy(&scored(&scores, &labels), t).unwrap();
        let b = accuracy(&scored(&flipped_scores, &flipped_labels), 1.0 - t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn label_flip_complements_accuracy((scores, labels) in labeled_scores()) {
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let a = accuracy(&scored(&scores, &labels), 0.5).unwrap();
        let b = accuracy(&scored(&scores, &flipped), 0.5).unwrap();
        prop_assert!((a + b - 100.0).abs() <= 1e-9);
    }
}
