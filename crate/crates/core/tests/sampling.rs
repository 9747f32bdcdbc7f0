//! Entropy sampling against exhaustive search, plus softmax and entropy
//! properties.

use calm_core::nn::{prediction_entropy, softmax};
use calm_core::sampling::{select_cb_ems, select_ems, take_count, ScoredSample};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Smallest achievable entropy sum over all `k`-subsets, by enumeration.
fn min_subset_sum(entropies: &[f64], k: usize) -> f64 {
    let n = entropies.len();
    let mut best = f64::INFINITY;
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| entropies[i]).sum();
        best = best.min(s);
    }
    best
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Entropies from a small grid so that ties are common.
fn entropy() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..6).prop_map(|k| k as f64 * 0.25), 0.0..1.6f64]
}

fn pool(max: usize, classes: usize) -> impl Strategy<Value = Vec<ScoredSample>> {
    prop::collection::vec((entropy(), 0..classes), 1..=max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(index, (entropy, pseudo_label))| ScoredSample {
                index,
                entropy,
                pseudo_label,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(cfg(400))]

    #[test]
    fn ems_is_minimum_sum_subset(scored in pool(12, 3), rate in 0.05..=1.0f64) {
        let k = take_count(rate, scored.len());
        prop_assume!(k > 0);
        let set = select_ems(&scored, rate, 3, 0).unwrap();
        prop_assert_eq!(set.len(), k);
        let all: Vec<f64> = scored.iter().map(|s| s.entropy).collect();
        let got: f64 = set.samples().iter().map(|s| s.entropy).sum();
        let best = min_subset_sum(&all, k);
        prop_assert!((got - best).abs() <= 1e-12, "{} vs {}", got, best);
        // Ties go to the lower index: no unselected sample beats a selected one.
        let worst = set.samples().iter().map(|s| (s.entropy, s.index)).fold((f64::NEG_INFINITY, 0), |a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a }
        });
        let chosen = set.indices();
        for s in &scored {
            if !chosen.contains(&s.index) {
                prop_assert!(s.entropy > worst.0 || (s.entropy == worst.0 && s.index > worst.1));
            }
        }
    }

    /// Every class contributes floor(r * |pool_c|) samples whose entropies
    /// form a minimum-sum subset of that class's pool.
    #[test]
    fn cb_ems_per_class_bottom_k(
        per_class in 1usize..=12,
        entropies in prop::collection::vec(entropy(), 36),
        rate in 0.05..=1.0f64,
    ) {
        let classes = 3;
        let scored: Vec<ScoredSample> = (0..per_class * classes)
            .map(|i| ScoredSample { index: i, entropy: entropies[i], pseudo_label: i % classes })
            .collect();
        let k = take_count(rate, per_class);
        prop_assume!(k > 0);
        let set = select_cb_ems(&scored, rate, classes, 4).unwrap();
        prop_assert_eq!(set.class_counts(), vec![k; classes]);
        for c in 0..classes {
            let pool: Vec<f64> = scored.iter().filter(|s| s.pseudo_label == c).map(|s| s.entropy).collect();
            let got: Vec<f64> = set.samples().iter().filter(|s| s.pseudo_label == c).map(|s| s.entropy).collect();
            let best = min_subset_sum(&pool, k);
            prop_assert!((got.iter().sum::<f64>() - best).abs() <= 1e-12);
            prop_assert_eq!(sorted(got), sorted(pool)[..k].to_vec());
        }
    }

    #[test]
    fn cb_ems_counts_follow_class_pools(scored in pool(60, 4), rate in 0.05..=1.0f64) {
        let mut pools = [0usize; 4];
        for s in &scored { pools[s.pseudo_label] += 1; }
        let expect: Vec<usize> = pools.iter().map(|&p| take_count(rate, p)).collect();
        prop_assume!(expect.iter().sum::<usize>() > 0);
        let set = select_cb_ems(&scored, rate, 4, 0).unwrap();
        prop_assert_eq!(set.class_counts(), expect);
        let skipped: Vec<usize> = (0..4).filter(|&c| pools[c] == 0).collect();
        prop_assert_eq!(set.skipped_classes(), &skipped[..]);
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in prop::collection::vec(-30.0..30.0f64, 2..8),
        shift in -500.0..500.0f64,
    ) {
        let a = softmax(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let b = softmax(&shifted).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_lies_between_zero_and_log_classes(logits in prop::collection::vec(-50.0..50.0f64, 2..10)) {
        let h = prediction_entropy(&logits).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (logits.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn uniform_logits_have_maximal_entropy() {
    let h = prediction_entropy(&[0.3; 5]).unwrap();
    assert!((h - 5f64.ln()).abs() < 1e-12);
}
