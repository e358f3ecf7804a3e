use algsel::distshift::*;
use algsel::problem::{Op, OperatorTable};
use proptest::prelude::*;

/// Depth-2 trees are one root operator over forced leaves, so only the root
/// operator factor of the likelihood can differ between the two tables.
fn root_only_case(scale: f64) -> (GenerativeConfig, GenerativeConfig, f64) {
    let train = OperatorTable::new(vec![(Op::Add, 2.0), (Op::Mul, 1.0), (Op::Sin, 1.0), (Op::Exp, 0.5)], 1.0, 1.0);
    let mut test = train.clone();
    test.entries[1].weight *= scale;
    let w = |t: &OperatorTable| t.entries.iter().map(|e| e.weight).collect::<Vec<f64>>();
    let closed = chi2_categorical(&w(&test), &w(&train), 0.0).unwrap();
    (GenerativeConfig::uniform(test, &[0], 2, 2), GenerativeConfig::uniform(train, &[0], 2, 2), closed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn categorical_chi2_is_nonnegative_and_zero_on_equal(p in prop::collection::vec(0.01f64..10.0, 1..10), q0 in prop::collection::vec(0.01f64..10.0, 10), c in 0.1f64..10.0, eps in prop::sample::select(vec![0.0, 0.01, 0.1])) {
        let q = &q0[..p.len()];
        let v = chi2_categorical(&p, q, eps).unwrap();
        prop_assert!(v >= 0.0);
        let scaled: Vec<f64> = p.iter().map(|x| x * c).collect();
        prop_assert!(chi2_categorical(&p, &scaled, 0.0).unwrap() < 1e-12);
        let tot = |v: &[f64], e: f64| v.iter().map(|x| x + e).sum::<f64>();
        let diff = p.iter().zip(q).map(|(a, b)| (a / tot(&p, 0.0) - (b + eps) / tot(q, eps)).abs()).fold(0.0, f64::max);
        if diff > 1e-6 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn unit_scale_shift_is_identity(f in 0.0f64..=1.0, seed in any::<u64>()) {
        let t = OperatorTable::default();
        prop_assert_eq!(apply_problem_shift(&t, f, 1.0, seed).unwrap(), t);
    }
}

#[test]
fn uniform_four_against_uniform_five() {
    assert_eq!(chi2_categorical(&[1.0, 1.0, 1.0, 1.0, 0.0], &[1.0; 5], 0.0).unwrap(), 0.25);
    let train = GenerativeConfig::uniform(OperatorTable::default(), &[0, 1, 2, 3, 4], 2, 4);
    let test = GenerativeConfig::uniform(OperatorTable::default(), &[0, 1, 2, 3], 2, 4);
    assert_eq!(chi2_algo(&test, &train, 0.0).unwrap(), 0.25);
}

#[test]
fn monte_carlo_of_identical_generators_is_zero() {
    let g = GenerativeConfig::uniform(OperatorTable::default(), &[0], 3, 5);
    let r = chi2_problem_mc(&g, &g, 10_000, 5, 1).unwrap();
    assert!(r.estimate.abs() <= 3.0 * r.stderr.max(1e-12), "{r:?}");
}

#[test]
fn monte_carlo_matches_single_factor_closed_form() {
    let (test, train, closed) = root_only_case(3.0);
    let r = chi2_problem_mc(&test, &train, 10_000, 11, 1).unwrap();
    assert!((r.estimate - closed).abs() <= 3.0 * r.stderr, "{} vs {closed} (se {})", r.estimate, r.stderr);
}

#[test]
fn monte_carlo_error_shrinks_with_n() {
    let (test, train, closed) = root_only_case(4.0);
    let err = |n: usize| {
        (0..12u64).map(|s| (chi2_problem_mc(&test, &train, n, 100 + s, 1).unwrap().estimate - closed).abs()).sum::<f64>() / 12.0
    };
    let (a, b, c) = (err(250), err(1000), err(4000));
    assert!(c < b && b < a, "{a} {b} {c}");
}

#[test]
fn monte_carlo_ignores_thread_count() {
    let (test, train, _) = root_only_case(2.0);
    let a = chi2_problem_mc(&test, &train, 3000, 8, 1).unwrap();
    let b = chi2_problem_mc(&test, &train, 3000, 8, 3).unwrap();
    assert_eq!(a, b);
}
