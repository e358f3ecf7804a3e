mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use algsel::bounds::{self, BoundInputs};
use algsel::distshift::{chi2_categorical, chi2_problem_mc, GenerativeConfig};
use algsel::experiments::{run_experiment, summarize, ExperimentConfig, Summary};
use algsel::neural::{frobenius_norm, spectral_norm, NormReport, PRECISE_ITERS, PRECISE_TOL};
use algsel::portfolio::{make_portfolio, make_portfolio_from, run, AlgorithmSpec, Family, MAX_PORTFOLIO};
use algsel::problem::{ExprNode, Op, OperatorTable, ProblemInstance};
use algsel::selectors::ModelKind;

const SCALE_CONFIG: &str = r#"{"scenario": "problem_scale", "sweep": [500, 1000, 2000, 4000], "n_seeds": 5, "master_seed": 7,
    "base": {"n_test": 1000, "n_algos": 10}}"#;

const SHIFT_CONFIG: &str = r#"{"scenario": "dist_shift", "sweep": [0, 1, 2, 3], "n_seeds": 5, "master_seed": 8,
    "base": {"n_train": 2000, "n_test": 1000, "n_algos": 5, "portfolio": {"families": ["DE", "PSO", "GA"]},
             "shift": {"axis": "algorithms", "smoothing_eps": 0.01}}}"#;

type Outcome = (bool, String);

fn constants() -> Outcome {
    let c0 = bounds::c0();
    let c1 = bounds::c1(0.1, 0.05).unwrap();
    let ok = (c0 - 5.0452).abs() <= 5e-4 && c0 < 5.05 && (c1 - 3.0234).abs() <= 1e-3;
    (ok, format!("c0 = {c0:.6}, c1(0.1, 0.05) = {c1:.6}"))
}

fn oracle() -> Outcome {
    let (worst, checked) = common::oracle_max_rel_err();
    (worst <= 1e-9 && checked == 700, format!("{checked} reports, max relative error {worst:.2e}"))
}

fn norm_kernels() -> Outcome {
    let (mut worst, mut frob_ok) = (0.0f64, true);
    for seed in 0..100 {
        let w = common::random_matrix(1000 + seed, 16);
        let est = spectral_norm(&w, PRECISE_ITERS, PRECISE_TOL).sigma;
        let want = common::svd_sigma_max(&w);
        worst = worst.max((est - want).abs() / want);
        frob_ok &= est <= frobenius_norm(&w) * (1.0 + 1e-12);
    }
    (worst <= 1e-6 && frob_ok, format!("100 matrices, max relative error {worst:.2e}, sigma <= frobenius: {frob_ok}"))
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut max_params = 0;
    for seed in 0..50u64 {
        let (net, x) = common::random_net(5000 + seed, 64);
        max_params = max_params.max(net.param_count());
        let c: Vec<f64> = (0..net.output_dim()).map(|j| 1.0 - 0.37 * j as f64).collect();
        worst = worst.max(common::gradient_check(&net, &x, &c, 1e-5));
    }
    (worst <= 1e-4 && max_params <= 64, format!("50 nets (<= {max_params} params), max relative error {worst:.2e}"))
}

fn chi2() -> Outcome {
    let cat = chi2_categorical(&[1.0, 1.0, 1.0, 1.0, 0.0], &[1.0; 5], 0.0).unwrap();
    let same = GenerativeConfig::uniform(OperatorTable::default(), &[0], 3, 5);
    let zero = chi2_problem_mc(&same, &same, 10_000, 17, 1).unwrap();
    let train_t = OperatorTable::new(vec![(Op::Add, 2.0), (Op::Mul, 1.0), (Op::Sin, 1.0), (Op::Exp, 0.5)], 1.0, 1.0);
    let mut test_t = train_t.clone();
    test_t.entries[1].weight *= 3.0;
    let w = |t: &OperatorTable| t.entries.iter().map(|e| e.weight).collect::<Vec<f64>>();
    let closed = chi2_categorical(&w(&test_t), &w(&train_t), 0.0).unwrap();
    let mc = chi2_problem_mc(
        &GenerativeConfig::uniform(test_t, &[0], 2, 2),
        &GenerativeConfig::uniform(train_t, &[0], 2, 2),
        10_000,
        19,
        1,
    )
    .unwrap();
    let ok = cat == 0.25 && zero.estimate.abs() <= 3.0 * zero.stderr && (mc.estimate - closed).abs() <= 3.0 * mc.stderr;
    (
        ok,
        format!(
            "uniform-4 vs uniform-5 = {cat}, P vs P = {:.2e} (se {:.1e}), root-factor {:.4} vs closed {closed:.4} (se {:.1e})",
            zero.estimate, zero.stderr, mc.estimate, mc.stderr
        ),
    )
}

fn norm_report(gf: f64, layers: usize) -> NormReport {
    NormReport {
        spectral: vec![1.0; layers],
        frobenius: vec![1.0; layers],
        lipschitz_upper: 5.0,
        frob_product: gf,
        w0_spectral: Some(2.0),
        converged: true,
    }
}

fn monotonicity() -> Outcome {
    let inputs = |s_p: usize, gf: f64, max_sq: f64, chi2: f64| {
        let mut inp = BoundInputs::new(s_p, 10, s_p / 4, 10, 0.25, norm_report(gf, 4));
        inp.eta = 0.25;
        inp.max_sq_norm = max_sq;
        inp.sum_sq_norms = max_sq * 0.5 * (s_p * 10) as f64;
        inp.chi2 = chi2;
        inp
    };
    let grid: Vec<usize> = (1..=10).map(|k| 200 * k * k).collect();
    let slack = |f: &dyn Fn(&BoundInputs) -> f64| grid.iter().map(|&s| f(&inputs(s, 20.0, 5.0, 0.0))).collect::<Vec<f64>>();
    let thm2 = slack(&|i| bounds::thm2_transductive_bound(i, 0.1).unwrap().slack().unwrap());
    let thm4 = slack(&|i| bounds::thm4_inductive_bound(i, 0.1).unwrap().slack().unwrap());
    let falling = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let cor5: Vec<f64> = (0..10)
        .map(|k| bounds::cor5_shifted_bound(&inputs(2000, 20.0, 5.0, k as f64 * 0.5), 0.1).unwrap().value.unwrap())
        .collect();
    let rising = cor5.windows(2).all(|w| w[1] > w[0]);
    let dominated = |chi2: f64| bounds::cor5_shifted_bound(&inputs(100_000, 100.0, 10.0, chi2), 0.1).unwrap().slack().unwrap();
    let ratio = dominated(3.0) / dominated(0.0);
    let target = 4f64.powf(0.75);
    let ok = falling(&thm2) && falling(&thm4) && rising && (ratio / target - 1.0).abs() <= 0.1;
    (
        ok,
        format!(
            "thm2 falling {}, thm4 falling {}, cor5 rising {rising}, slack ratio {ratio:.4} vs {target:.4}",
            falling(&thm2),
            falling(&thm4)
        ),
    )
}

fn experiment(config: &str, out: &Path, jobs: usize) -> Summary {
    let cfg: ExperimentConfig = serde_json::from_str(config).unwrap();
    let rows = run_experiment(&cfg, Some(out), jobs).unwrap();
    summarize(&rows).unwrap()
}

fn mean_accuracy(s: &Summary) -> BTreeMap<(ModelKind, u64), f64> {
    s.rows.iter().map(|r| ((r.model, r.sweep_value.to_bits()), r.accuracy_mean)).collect()
}

fn scale_trend(dir: &Path) -> Outcome {
    let s = experiment(SCALE_CONFIG, &dir.join("scale_j1.csv"), 1);
    let acc = mean_accuracy(&s);
    let at = |m| acc[&(m, 4000f64.to_bits())];
    let rho_ok = ModelKind::ALL.iter().all(|m| s.spearman.get(m).is_some_and(|r| *r >= 0.8));
    let ok = rho_ok && at(ModelKind::ModelA) >= at(ModelKind::ModelCla) && at(ModelKind::ModelB) >= at(ModelKind::ModelCla);
    let rho: Vec<String> = ModelKind::ALL.iter().map(|m| format!("{}={:.2}", m.name(), s.spearman[m])).collect();
    let last: Vec<String> = ModelKind::ALL.iter().map(|m| format!("{}={:.3}", m.name(), at(*m))).collect();
    (ok, format!("spearman {}; accuracy at 4000: {}", rho.join(" "), last.join(" ")))
}

fn shift_trend(dir: &Path) -> Outcome {
    let s = experiment(SHIFT_CONFIG, &dir.join("shift_j1.csv"), 1);
    let acc = mean_accuracy(&s);
    let at = |m, v: f64| acc[&(m, v.to_bits())];
    let b = at(ModelKind::ModelB, 3.0);
    let drops: BTreeMap<ModelKind, f64> = ModelKind::ALL.iter().map(|&m| (m, at(m, 0.0) - at(m, 3.0))).collect();
    let smallest = ModelKind::ALL.iter().filter(|m| **m != ModelKind::ModelB).all(|m| drops[&ModelKind::ModelB] < drops[m]);
    let ok = b > at(ModelKind::ModelA, 3.0) && b > at(ModelKind::ModelCla, 3.0) && smallest;
    let at3: Vec<String> = ModelKind::ALL.iter().map(|m| format!("{}={:.3}", m.name(), at(*m, 3.0))).collect();
    let d: Vec<String> = drops.iter().map(|(m, v)| format!("{}={v:.3}", m.name())).collect();
    (ok, format!("accuracy at n_new=3: {}; drop: {}", at3.join(" "), d.join(" ")))
}

fn sphere() -> ProblemInstance {
    let sq = |i| ExprNode::binary(Op::Mul, ExprNode::var(i), ExprNode::var(i));
    let tree = (1..5).fold(sq(0), |t, i| ExprNode::binary(Op::Add, t, sq(i)));
    ProblemInstance::from_tree(0, tree, 5, (-5.0, 5.0), &OperatorTable::default(), 32, 0.0)
}

fn metaheuristics() -> Outcome {
    let p = sphere();
    let mut algos: Vec<AlgorithmSpec> = make_portfolio(MAX_PORTFOLIO, 0).unwrap();
    algos.extend(make_portfolio_from(8, 0, &[Family::DE, Family::PSO, Family::GA]).unwrap());
    let mut worst = (20, 0u32);
    for a in &algos {
        let hits = (0..20).filter(|&s| run(a, &p, s).best_value <= 1e-2).count();
        if hits < worst.0 {
            worst = (hits, a.id);
        }
    }
    (worst.0 >= 18, format!("{} algorithms, fewest successes {}/20 (id {})", algos.len(), worst.0, worst.1))
}

fn strip_wall_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

fn determinism(dir: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, cfg) in [("scale", SCALE_CONFIG), ("shift", SHIFT_CONFIG)] {
        let a = dir.join(format!("{name}_j1.csv"));
        let b = dir.join(format!("{name}_j3.csv"));
        experiment(cfg, &b, 3);
        let (la, lb) = (strip_wall_time(&a), strip_wall_time(&b));
        let same = la.len() > 1 && la == lb;
        ok &= same;
        notes.push(format!("{name}: {} rows identical at jobs 1 and 3: {same}", la.len() - 1));
    }
    (ok, notes.join("; "))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("constants", Box::new(constants)),
        ("bound oracle", Box::new(oracle)),
        ("norm kernels", Box::new(norm_kernels)),
        ("gradient check", Box::new(gradients)),
        ("chi-square", Box::new(chi2)),
        ("bound monotonicity", Box::new(monotonicity)),
        ("problem-scale trend", Box::new(|| scale_trend(d))),
        ("algorithm-shift trend", Box::new(|| shift_trend(d))),
        ("metaheuristic sanity", Box::new(metaheuristics)),
        ("determinism", Box::new(|| determinism(d))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = f();
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<22} {} [{:.1}s] {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
