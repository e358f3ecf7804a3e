#![allow(dead_code)]

use algsel::bounds::{self, BoundInputs, BoundReport, Cor2Which};
use algsel::neural::NormReport;
use serde_json::Value;

pub fn oracle_fixture() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/bound_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture present")).expect("fixture parses")
}

pub fn num(v: &Value) -> f64 {
    match v {
        Value::String(s) => s.parse().expect("numeric string"),
        other => other.as_f64().expect("number"),
    }
}

/// Bound inputs from scalar summaries: `layers` norms with the given products.
pub fn inputs_from(x: &Value) -> BoundInputs {
    let field = |k: &str| num(&x[k]);
    let layers = x["layers"].as_u64().unwrap() as usize;
    let norm = NormReport {
        spectral: vec![1.0; layers],
        frobenius: vec![1.0; layers],
        lipschitz_upper: field("lipschitz"),
        frob_product: field("frob_product"),
        w0_spectral: Some(field("w0")),
        converged: true,
    };
    let count = |k: &str| x[k].as_u64().unwrap() as usize;
    let mut inp = BoundInputs::new(count("s_p"), count("s_a"), count("t_p"), count("t_a"), field("gamma_loss"), norm);
    inp.eta = field("eta");
    inp.delta = field("delta");
    inp.gamma_margin = field("gamma_margin");
    inp.sum_sq_norms = field("sum_sq_norms");
    inp.max_sq_norm = field("max_sq_norm");
    inp.chi2 = field("chi2");
    inp
}

pub fn report_by_name(name: &str, inp: &BoundInputs, error_s: f64) -> BoundReport {
    match name {
        "thm1" => bounds::thm1_transductive_complexity(inp),
        "thm2" => bounds::thm2_transductive_bound(inp, error_s),
        "cor2_reg" => bounds::cor2_bounds(inp, error_s, Cor2Which::Reg),
        "cor2_cla" => bounds::cor2_bounds(inp, error_s, Cor2Which::Cla),
        "thm3" => bounds::thm3_inductive_complexity(inp),
        "thm4" => bounds::thm4_inductive_bound(inp, error_s),
        "cor5" => bounds::cor5_shifted_bound(inp, error_s),
        other => panic!("unknown bound {other}"),
    }
    .expect("bound evaluates")
}

/// Largest relative deviation of any value or term from the oracle.
pub fn oracle_max_rel_err() -> (f64, usize) {
    let fx = oracle_fixture();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for case in fx["cases"].as_array().unwrap() {
        let x = &case["inputs"];
        let inp = inputs_from(x);
        let err = num(&x["error_s"]);
        for (name, exp) in case["expected"].as_object().unwrap() {
            let r = report_by_name(name, &inp, err);
            let rel = |got: f64, want: f64| ((got - want) / want.abs().max(1e-300)).abs();
            worst = worst.max(rel(r.value.expect("applicable"), num(&exp["value"])));
            for (t, v) in exp["terms"].as_object().unwrap() {
                worst = worst.max(rel(r.term(t), num(v)));
            }
            checked += 1;
        }
    }
    (worst, checked)
}

/// Largest singular value by dense SVD.
pub fn svd_sigma_max(w: &ndarray::Array2<f64>) -> f64 {
    let m = nalgebra::DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Random matrix with shape up to `max_dim` on each side.
pub fn random_matrix(seed: u64, max_dim: usize) -> ndarray::Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    ndarray::Array2::from_shape_simple_fn((r, c), || rng.gen_range(-2.0..2.0))
}

/// Random net with at most `max_params` parameters and a random input.
pub fn random_net(seed: u64, max_params: usize) -> (algsel::neural::Network, Vec<f64>) {
    use algsel::neural::{Activation, Network};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    loop {
        let depth = rng.gen_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=5)).collect();
        let params: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params > max_params {
            continue;
        }
        let a: Vec<Activation> = (0..depth).map(|_| acts[rng.gen_range(0..acts.len())]).collect();
        let mut net = Network::new(&sizes, &a, rng.gen()).unwrap();
        for l in &mut net.layers {
            l.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let x = (0..sizes[0]).map(|_| rng.gen_range(-1.5..1.5)).collect();
        return (net, x);
    }
}

/// Max relative error between `backward` and central differences of `c . f(x)`.
pub fn gradient_check(net: &algsel::neural::Network, x: &[f64], c: &[f64], h: f64) -> f64 {
    let obj = |n: &algsel::neural::Network| n.forward(x).unwrap().iter().zip(c).map(|(o, c)| o * c).sum::<f64>();
    let g = net.backward(x, c).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst = 0.0f64;
    for (li, layer) in net.layers.iter().enumerate() {
        for i in 0..layer.w.nrows() {
            for j in 0..layer.w.ncols() {
                let (mut p, mut m) = (net.clone(), net.clone());
                p.layers[li].w[[i, j]] += h;
                m.layers[li].w[[i, j]] -= h;
                worst = worst.max(rel(g.dw[li][[i, j]], (obj(&p) - obj(&m)) / (2.0 * h)));
            }
            let (mut p, mut m) = (net.clone(), net.clone());
            p.layers[li].b[i] += h;
            m.layers[li].b[i] -= h;
            worst = worst.max(rel(g.db[li][i], (obj(&p) - obj(&m)) / (2.0 * h)));
        }
    }
    worst
}
