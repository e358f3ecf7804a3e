use algsel::labeling::{self, PerformanceMatrix, Split};
use algsel::portfolio::{make_portfolio, AlgorithmSpec};
use algsel::problem::{generate_problems, OperatorTable, ProblemInstance, ProblemSpec};
use algsel::selectors::*;
use algsel::Error;
use proptest::prelude::*;

fn problems(n: usize, seed: u64) -> Vec<ProblemInstance> {
    generate_problems(&ProblemSpec::new(OperatorTable::default(), 3, 5), n, 0, seed, 1).unwrap()
}

fn matrix(ps: &[ProblemInstance], algos: &[AlgorithmSpec], f: impl Fn(&ProblemInstance, &AlgorithmSpec) -> f64) -> PerformanceMatrix {
    let means = ps.iter().map(|p| algos.iter().map(|a| f(p, a)).collect()).collect();
    PerformanceMatrix::from_means(ps.iter().map(|p| p.id).collect(), algos.iter().map(|a| a.id).collect(), means, 1).unwrap()
}

fn ids(ps: &[ProblemInstance]) -> Vec<u64> {
    ps.iter().map(|p| p.id).collect()
}

fn aids(algos: &[AlgorithmSpec]) -> Vec<u32> {
    algos.iter().map(|a| a.id).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn argmax_survives_increasing_transforms(scores in prop::collection::vec(-5.0f64..5.0, 1..12), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let ids: Vec<u32> = (0..scores.len() as u32).map(|i| i * 3 + 1).collect();
        let base = argmax_by_id(&scores, &ids);
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let exp: Vec<f64> = scores.iter().map(|s| (s / 2.0).exp()).collect();
        prop_assert_eq!(argmax_by_id(&affine, &ids), base);
        prop_assert_eq!(argmax_by_id(&exp, &ids), base);
    }

    #[test]
    fn argmax_ignores_candidate_order(scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]), 1..12), rot in 0usize..12) {
        let ids: Vec<u32> = (0..scores.len() as u32).collect();
        let mut pairs: Vec<(f64, u32)> = scores.iter().copied().zip(ids.iter().copied()).collect();
        let k = rot % pairs.len();
        pairs.rotate_left(k);
        pairs.reverse();
        let (s2, i2): (Vec<f64>, Vec<u32>) = pairs.into_iter().unzip();
        prop_assert_eq!(argmax_by_id(&s2, &i2), argmax_by_id(&scores, &ids));
    }
}

#[test]
fn select_ignores_candidate_order_for_every_model() {
    let ps = problems(40, 3);
    let algos = make_portfolio(6, 1).unwrap();
    let perf = matrix(&ps, &algos, |p, a| ((p.id * 5 + a.id as u64 * 7) % 6) as f64);
    let cat = Catalog::new(&ps, &algos);
    let hyper = FitHyper { epochs: 5, ..FitHyper::default() };
    for kind in ModelKind::ALL {
        let mut m = build(kind, &cat, &ids(&ps), &aids(&algos), 0.5, 2).unwrap();
        fit(&mut m, &cat, &perf, &hyper).unwrap();
        let fwd: Vec<&AlgorithmSpec> = algos.iter().collect();
        let mut rev = fwd.clone();
        rev.reverse();
        rev.rotate_left(2);
        for p in &ps {
            assert_eq!(select(&m, p, &fwd).unwrap(), select(&m, p, &rev).unwrap(), "{kind:?}");
        }
    }
}

#[test]
fn model_b_scores_depend_only_on_features() {
    let ps = problems(10, 8);
    let mut algos = make_portfolio(3, 4).unwrap();
    let mut twin = algos[1].clone();
    twin.id = 99;
    twin.hyperparams.population_size += 7;
    algos.push(twin);
    let cat = Catalog::new(&ps, &algos);
    let m = build(ModelKind::ModelB, &cat, &ids(&ps), &aids(&algos[..3]), 0.5, 5).unwrap();
    let pr: Vec<&ProblemInstance> = ps.iter().collect();
    let cands: Vec<&AlgorithmSpec> = algos.iter().collect();
    let sc = m.scores(&pr, &cands).unwrap();
    for i in 0..ps.len() {
        assert_eq!(sc[[i, 1]].to_bits(), sc[[i, 3]].to_bits());
    }
}

#[test]
fn model_a_rejects_unseen_algorithms() {
    let ps = problems(100, 2);
    let algos = make_portfolio(6, 2).unwrap();
    let cat = Catalog::new(&ps, &algos);
    let m = build(ModelKind::ModelA, &cat, &ids(&ps), &aids(&algos[..5]), 0.5, 1).unwrap();
    assert_eq!(m.net.input_dim(), 105);
    let cands: Vec<&AlgorithmSpec> = algos.iter().collect();
    assert!(matches!(select(&m, &ps[0], &cands), Err(Error::NoEmbedding(id)) if id == algos[5].id));
    assert!(select(&m, &ps[0], &cands[..5]).is_ok());
}

#[test]
fn random_selector_error_is_binomial() {
    let ps = problems(2100, 6);
    let algos = make_portfolio(10, 3).unwrap();
    let perf = matrix(&ps, &algos, |p, a| ((p.id * 31 + a.id as u64 * 17) % 10) as f64);
    let cat = Catalog::new(&ps, &algos);
    let split = Split::new(ids(&ps[..100]), ids(&ps[100..]), aids(&algos), aids(&algos));
    let r = evaluate(&RandomSelector { seed: 12 }, &cat, &split, &perf).unwrap();
    assert!((r.error_t - 0.9).abs() <= 0.03, "error_T {}", r.error_t);
    assert!(r.margin_loss.is_none());
}

/// The best algorithm is the one with the largest value of one predefined
/// feature when the problem starts with a variable token, else the smallest.
#[test]
fn model_b_learns_a_planted_feature_rule() {
    let ps = problems(2000, 21);
    let algos = make_portfolio(10, 9).unwrap();
    let vocab = OperatorTable::default();
    let var_slot = vocab.vocab_index(&algsel::problem::Token::Var(0)).unwrap();
    let bit = |p: &ProblemInstance| p.features[var_slot] > 0.0;
    let ones = ps.iter().filter(|p| bit(p)).count();
    assert!(ones > 200 && ones < 1800, "unbalanced rule: {ones}");
    let k = 2;
    let perf = matrix(&ps, &algos, |p, a| if bit(p) { -a.predefined_features[k] } else { a.predefined_features[k] });
    let split = labeling::split(&perf, &ps, 0.2, 4).unwrap();
    let cat = Catalog::new(&ps, &algos);
    let mut m = build(ModelKind::ModelB, &cat, &split.train_problems, &split.train_algos, 0.5, 3).unwrap();
    let hyper = FitHyper { steps: Some(3000), batch_size: Some(256), lr: 0.05, ..FitHyper::default() };
    fit(&mut m, &cat, &perf, &hyper).unwrap();
    let r = evaluate(&m, &cat, &split, &perf).unwrap();
    assert!(1.0 - r.error_t >= 0.95, "test accuracy {}", 1.0 - r.error_t);
}
