mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tknn_core::knn::{knn_shapley_all, knn_shapley_single};
use tknn_core::tknn::{a2, a2_direct_sum, tknn_semivalue_generic, tknn_shapley_all, GENERIC_SEMIVALUE_LIMIT};
use tknn_core::valuation::{aggregate_over_validation, semivalue_oracle, shapley_oracle, Oracle, SemivalueWeight};
use tknn_core::{Dataset, DistanceMetric, Error, KnnConfig, KnnVariant, LabeledPoint, TknnConfig, UtilityKind};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_algorithms_match_enumeration(n in 1usize..=9, c in 2usize..=3, k in 1usize..=6, seed: u64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, n, c, 1);
        let z = &inst.validation[0];
        let tknn = tknn_shapley_all(&inst.train, &TknnConfig::new(inst.tau, inst.metric), &inst.validation_set()).unwrap();
        let exact = shapley_oracle(&inst.train, UtilityKind::Tknn { tau: inst.tau }, z, inst.metric).unwrap();
        prop_assert!(max_abs_diff(&tknn.scores, &exact.scores) < 1e-9);
        for variant in [KnnVariant::Refined, KnnVariant::Old] {
            let cfg = KnnConfig::new(k, inst.metric, variant);
            let fast = knn_shapley_single(&inst.train, &cfg, z).unwrap();
            let exact = shapley_oracle(&inst.train, cfg.utility(), z, inst.metric).unwrap();
            prop_assert!(max_abs_diff(&fast.scores, &exact.scores) < 1e-9, "{:?} {:?}", fast.scores, exact.scores);
        }
    }

    #[test]
    fn a2_recurrence_matches_direct_sum(c in 0u64..400, frac in 0.0f64..1.0) {
        let cx = 1 + ((c + 1) as f64 * frac) as u64;
        let cx = cx.min(c + 1);
        let (a, b) = (a2(c, cx), a2_direct_sum(c, cx));
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn all_equals_sum_of_singles(n in 1usize..=30, n_val in 1usize..=12, seed: u64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, n, 2, n_val);
        let cfg = KnnConfig::new(3, inst.metric, KnnVariant::Refined);
        let all = knn_shapley_all(&inst.train, &cfg, &inst.validation_set()).unwrap();
        let singles: Vec<_> = inst.validation.iter().map(|z| knn_shapley_single(&inst.train, &cfg, z).unwrap()).collect();
        let summed = aggregate_over_validation(&singles).unwrap();
        prop_assert_eq!(summed.validation_size, n_val);
        prop_assert!(max_abs_diff(&all.scores, &summed.scores) < 1e-12);
    }
}

#[test]
fn generic_shapley_weight_matches_closed_form() {
    let mut r = rng(11);
    for _ in 0..40 {
        let n = r.random_range(1..=50);
        let inst = random_instance(&mut r, n, 2, 1);
        let cfg = TknnConfig::new(inst.tau, inst.metric);
        let generic = tknn_semivalue_generic(&inst.train, &cfg, &SemivalueWeight::Shapley, &inst.validation[0]).unwrap();
        let closed = tknn_shapley_all(&inst.train, &cfg, &inst.validation_set()).unwrap();
        for (g, c) in generic.scores.iter().zip(&closed.scores) {
            assert!((g - c).abs() <= 1e-6 * c.abs().max(1e-9), "{g} vs {c}");
        }
    }
}

#[test]
fn generic_banzhaf_matches_enumeration() {
    let mut r = rng(12);
    for _ in 0..40 {
        let n = r.random_range(1..=10);
        let inst = random_instance(&mut r, n, 3, 1);
        let kind = UtilityKind::Tknn { tau: inst.tau };
        let cfg = TknnConfig::new(inst.tau, inst.metric);
        let generic = tknn_semivalue_generic(&inst.train, &cfg, &SemivalueWeight::Banzhaf, &inst.validation[0]).unwrap();
        let exact = semivalue_oracle(&inst.train, kind, &SemivalueWeight::Banzhaf, &inst.validation[0], inst.metric).unwrap();
        assert!(max_abs_diff(&generic.scores, &exact.scores) < 1e-9);
    }
}

#[test]
fn generic_custom_weight_matches_enumeration() {
    // Beta-like weight, renormalized per n
    let raw = |n: usize, k: usize| (k as f64).sqrt() / n as f64;
    let weight = SemivalueWeight::custom(move |n, k| {
        let total: f64 = (1..=n).map(|j| raw(n, j) * binom(n - 1, j - 1)).sum();
        raw(n, k) * n as f64 / total
    });
    let mut r = rng(13);
    for _ in 0..20 {
        let n = r.random_range(1..=9);
        let inst = random_instance(&mut r, n, 2, 1);
        let kind = UtilityKind::Tknn { tau: inst.tau };
        let cfg = TknnConfig::new(inst.tau, inst.metric);
        let generic = tknn_semivalue_generic(&inst.train, &cfg, &weight, &inst.validation[0]).unwrap();
        let exact = semivalue_oracle(&inst.train, kind, &weight, &inst.validation[0], inst.metric).unwrap();
        assert!(max_abs_diff(&generic.scores, &exact.scores) < 1e-9);
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn generic_guard_and_normalization() {
    let ds = tknn_core::dataset::generate_gaussian_synthetic(GENERIC_SEMIVALUE_LIMIT + 1, 2, 1).unwrap();
    let z = LabeledPoint::new(vec![1.0, 0.0], 0);
    let cfg = TknnConfig::new(-0.5, DistanceMetric::NegativeCosine);
    assert!(matches!(
        tknn_semivalue_generic(&ds, &cfg, &SemivalueWeight::Shapley, &z),
        Err(Error::EnumerationLimit { .. })
    ));
    let small = ds.select(&[0, 1, 2]);
    let bad = SemivalueWeight::custom(|_, _| 1.0);
    assert!(tknn_semivalue_generic(&small, &cfg, &bad, &z).is_err());
}

#[test]
fn oracle_refuses_large_inputs() {
    let ds = tknn_core::dataset::generate_gaussian_synthetic(21, 2, 1).unwrap();
    let z = LabeledPoint::new(vec![1.0, 0.0], 0);
    let err = Oracle::default()
        .semivalues(&ds, UtilityKind::KnnSoft { k: 1 }, &SemivalueWeight::Shapley, &[z], DistanceMetric::Euclidean)
        .unwrap_err();
    assert!(matches!(err, Error::EnumerationLimit { n: 21, limit: 20 }));
}

#[test]
fn refined_short_datasets_match_enumeration() {
    // fewer points than K, where the textbook recursion overcounts
    let z = LabeledPoint::new(vec![0.0], 1);
    let ds = Dataset::from_points(&[LabeledPoint::new(vec![1.0], 1), LabeledPoint::new(vec![2.0], 0)], 1, 2).unwrap();
    let cfg = KnnConfig::new(3, DistanceMetric::Euclidean, KnnVariant::Refined);
    let scores = knn_shapley_single(&ds, &cfg, &z).unwrap().scores;
    assert!((scores[0] - 0.5).abs() < 1e-12 && (scores[1] + 0.5).abs() < 1e-12, "{scores:?}");
}

#[test]
fn results_serialize_with_descriptor() {
    let ds = tknn_core::dataset::generate_gaussian_synthetic(5, 2, 4).unwrap();
    let val = tknn_core::dataset::generate_gaussian_synthetic(2, 2, 5).unwrap();
    let res = tknn_shapley_all(&ds, &TknnConfig::new(-0.5, DistanceMetric::NegativeCosine), &val).unwrap();
    let json = serde_json::to_value(&res).unwrap();
    assert_eq!(json["method"]["utility"]["kind"], "tknn");
    assert_eq!(json["validation_size"], 2);
    assert_eq!(json["scores"].as_array().unwrap().len(), 5);
    let back: tknn_core::ValuationResult = serde_json::from_value(json).unwrap();
    assert_eq!(back, res);
}
