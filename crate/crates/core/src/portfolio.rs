//! Metaheuristic portfolio.
//!
//! Five families share one budget convention: `population_size * iterations`
//! objective evaluations, the first iteration being the initial sample. All
//! step-size and temperature schedules depend on the absolute iteration index
//! (never on the total budget), so a longer run replays a shorter one as a
//! prefix and the running minimum can only improve.

use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{eval_rpn, ProblemInstance};
use crate::seed;

/// Length of the predefined algorithm feature vector.
pub const ALGO_FEATURE_LEN: usize = 11;
pub const MAX_PORTFOLIO: usize = 64;
pub const DEFAULT_POPULATION: usize = 30;
pub const DEFAULT_ITERATIONS: usize = 200;

/// Per-iteration decay of GA mutation scale and SA step size.
const STEP_DECAY: f64 = 0.975;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    DE,
    PSO,
    GA,
    SA,
    RandomSearch,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::DE, Family::PSO, Family::GA, Family::SA, Family::RandomSearch];

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|f| *f == self).expect("listed")
    }
}

/// Family-appropriate hyperparameters; slots a family does not use stay 0.
///
/// - DE: `mutation_rate` is the differential weight F, `crossover_rate` is CR.
/// - PSO: `inertia_or_cooling` is the inertia w, `selection_pressure` the
///   shared cognitive/social acceleration coefficient.
/// - GA: per-gene mutation probability, blend-crossover probability,
///   tournament size, elitism.
/// - SA: `mutation_rate` is the initial step as a fraction of the box width,
///   `inertia_or_cooling` the geometric cooling factor; `population_size`
///   neighbours are proposed per temperature level.
/// - RandomSearch: `inertia_or_cooling` is the per-iteration shrink factor of
///   the sampling box around the incumbent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub population_size: usize,
    pub iterations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub inertia_or_cooling: f64,
    pub selection_pressure: f64,
    pub elitism: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub id: u32,
    pub family: Family,
    pub hyperparams: HyperParams,
    pub predefined_features: Vec<f64>,
}

impl AlgorithmSpec {
    pub fn new(id: u32, family: Family, hyperparams: HyperParams) -> Self {
        let predefined_features = algo_features(family, &hyperparams);
        AlgorithmSpec {
            id,
            family,
            hyperparams,
            predefined_features,
        }
    }

    /// Unjittered family defaults.
    pub fn default_for(id: u32, family: Family) -> Self {
        let mut h = HyperParams {
            population_size: DEFAULT_POPULATION,
            iterations: DEFAULT_ITERATIONS,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            inertia_or_cooling: 0.0,
            selection_pressure: 0.0,
            elitism: false,
        };
        match family {
            Family::DE => {
                h.mutation_rate = 0.6;
                h.crossover_rate = 0.9;
            }
            Family::PSO => {
                h.inertia_or_cooling = 0.6;
                h.selection_pressure = 1.5;
            }
            Family::GA => {
                h.mutation_rate = 0.2;
                h.crossover_rate = 0.8;
                h.selection_pressure = 3.0;
                h.elitism = true;
            }
            Family::SA => {
                h.mutation_rate = 0.1;
                h.inertia_or_cooling = 0.95;
            }
            Family::RandomSearch => {
                h.inertia_or_cooling = 0.97;
            }
        }
        AlgorithmSpec::new(id, family, h)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperparams;
        if h.iterations == 0 || h.population_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "algorithm {}: population and iterations must be >= 1",
                self.id
            )));
        }
        let population_based = matches!(self.family, Family::DE | Family::PSO | Family::GA);
        if population_based && h.population_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "algorithm {}: population-based families need population_size >= 4",
                self.id
            )));
        }
        Ok(())
    }

    /// Same spec with a different evaluation budget (features are recomputed).
    pub fn with_budget(&self, population_size: usize, iterations: usize) -> Self {
        let mut h = self.hyperparams.clone();
        h.population_size = population_size;
        h.iterations = iterations;
        AlgorithmSpec::new(self.id, self.family, h)
    }
}

/// `[family one-hot] ++ [log10(pop)/3, mutation, crossover, inertia/cooling,
/// selection_pressure/5, elitism]`.
pub fn algo_features(family: Family, h: &HyperParams) -> Vec<f64> {
    let mut f = vec![0.0; ALGO_FEATURE_LEN];
    f[family.index()] = 1.0;
    f[5] = (h.population_size as f64).log10() / 3.0;
    f[6] = h.mutation_rate;
    f[7] = h.crossover_rate;
    f[8] = h.inertia_or_cooling;
    f[9] = h.selection_pressure / 5.0;
    f[10] = if h.elitism { 1.0 } else { 0.0 };
    f
}

/// `n` specs cycling DE, PSO, GA, SA, RandomSearch with seeded jitter.
pub fn make_portfolio(n: usize, seed: u64) -> Result<Vec<AlgorithmSpec>> {
    make_portfolio_from(n, seed, &Family::ALL)
}

/// As [`make_portfolio`], cycling through `families` instead of all five.
pub fn make_portfolio_from(n: usize, seed: u64, families: &[Family]) -> Result<Vec<AlgorithmSpec>> {
    if families.is_empty() {
        return Err(Error::InvalidArgument("portfolio needs at least one family".into()));
    }
    if n == 0 || n > MAX_PORTFOLIO {
        return Err(Error::InvalidArgument(format!(
            "portfolio size must be in 1..={MAX_PORTFOLIO}, got {n}"
        )));
    }
    Ok((0..n)
        .map(|k| {
            let family = families[k % families.len()];
            let mut rng = seed::derived_rng(seed, &[k as u64]);
            let mut h = AlgorithmSpec::default_for(k as u32, family).hyperparams;
            h.population_size = rng.gen_range(20..=40);
            match family {
                Family::DE => {
                    h.mutation_rate = rng.gen_range(0.4..0.9);
                    h.crossover_rate = rng.gen_range(0.3..0.95);
                }
                Family::PSO => {
                    h.inertia_or_cooling = rng.gen_range(0.4..0.75);
                    h.selection_pressure = rng.gen_range(1.2..2.0);
                }
                Family::GA => {
                    h.mutation_rate = rng.gen_range(0.05..0.3);
                    h.crossover_rate = rng.gen_range(0.6..0.95);
                    h.selection_pressure = rng.gen_range(2..=5) as f64;
                    h.elitism = rng.gen_bool(0.5);
                }
                Family::SA => {
                    h.mutation_rate = rng.gen_range(0.05..0.2);
                    h.inertia_or_cooling = rng.gen_range(0.85..0.96);
                }
                Family::RandomSearch => {
                    h.inertia_or_cooling = rng.gen_range(0.955..0.98);
                }
            }
            AlgorithmSpec::new(k as u32, family, h)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_value: f64,
    pub evals_used: usize,
}

/// Objective wrapper: clamps nothing, counts evaluations, tracks the minimum.
struct Objective<'a> {
    problem: &'a ProblemInstance,
    stack: Vec<f64>,
    evals: usize,
    best: f64,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a ProblemInstance) -> Self {
        Objective {
            problem,
            stack: Vec::with_capacity(problem.rpn.len()),
            evals: 0,
            best: f64::INFINITY,
        }
    }

    #[inline]
    fn eval(&mut self, x: &[f64]) -> f64 {
        let v = eval_rpn(&self.problem.rpn, x, &mut self.stack);
        self.evals += 1;
        if v < self.best {
            self.best = v;
        }
        v
    }
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn uniform_point(lo: &[f64], hi: &[f64], rng: &mut seed::Rng) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
}

fn gauss(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Run one algorithm on one problem. Deterministic in `seed`.
pub fn run(algo: &AlgorithmSpec, problem: &ProblemInstance, seed: u64) -> RunResult {
    let mut rng = seed::rng(seed);
    let mut obj = Objective::new(problem);
    let h = &algo.hyperparams;
    let (pop, iters) = (h.population_size.max(1), h.iterations.max(1));
    match algo.family {
        Family::DE => de(h, pop.max(4), iters, &mut obj, &mut rng),
        Family::PSO => pso(h, pop, iters, &mut obj, &mut rng),
        Family::GA => ga(h, pop.max(2), iters, &mut obj, &mut rng),
        Family::SA => sa(h, pop, iters, &mut obj, &mut rng),
        Family::RandomSearch => random_search(h, pop, iters, &mut obj, &mut rng),
    }
    RunResult {
        best_value: obj.best,
        evals_used: obj.evals,
    }
}

fn init_population(obj: &mut Objective, pop: usize, rng: &mut seed::Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (lo, hi) = (&obj.problem.lo, &obj.problem.hi);
    let xs: Vec<Vec<f64>> = (0..pop).map(|_| uniform_point(lo, hi, rng)).collect();
    let fs = xs.iter().map(|x| obj.eval(x)).collect();
    (xs, fs)
}

/// DE/rand/1/bin with greedy in-place replacement.
fn de(h: &HyperParams, pop: usize, iters: usize, obj: &mut Objective, rng: &mut seed::Rng) {
    let d = obj.problem.dim;
    let (lo, hi) = (obj.problem.lo.clone(), obj.problem.hi.clone());
    let (mut xs, mut fs) = init_population(obj, pop, rng);
    let mut trial = vec![0.0; d];
    for _ in 1..iters {
        for i in 0..pop {
            let pick = |rng: &mut seed::Rng, taken: &[usize]| loop {
                let r = rng.gen_range(0..pop);
                if !taken.contains(&r) {
                    return r;
                }
            };
            let r1 = pick(rng, &[i]);
            let r2 = pick(rng, &[i, r1]);
            let r3 = pick(rng, &[i, r1, r2]);
            let jrand = rng.gen_range(0..d);
            for j in 0..d {
                trial[j] = if j == jrand || rng.gen::<f64>() < h.crossover_rate {
                    xs[r1][j] + h.mutation_rate * (xs[r2][j] - xs[r3][j])
                } else {
                    xs[i][j]
                };
            }
            clamp_into(&mut trial, &lo, &hi);
            let f = obj.eval(&trial);
            if f <= fs[i] {
                xs[i].copy_from_slice(&trial);
                fs[i] = f;
            }
        }
    }
}

/// Global-best PSO with velocity clamping at 20% of the box width.
fn pso(h: &HyperParams, pop: usize, iters: usize, obj: &mut Objective, rng: &mut seed::Rng) {
    let d = obj.problem.dim;
    let (lo, hi) = (obj.problem.lo.clone(), obj.problem.hi.clone());
    let vmax: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.2 * (u - l)).collect();
    let (mut xs, fs) = init_population(obj, pop, rng);
    let mut vs: Vec<Vec<f64>> = (0..pop)
        .map(|_| (0..d).map(|j| rng.gen_range(-0.5..=0.5) * vmax[j]).collect())
        .collect();
    let mut pbest = xs.clone();
    let mut pbest_f = fs;
    let g0 = argmin(&pbest_f);
    let mut gbest = pbest[g0].clone();
    let mut gbest_f = pbest_f[g0];
    let (w, c) = (h.inertia_or_cooling, h.selection_pressure);
    for _ in 1..iters {
        for i in 0..pop {
            for j in 0..d {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let v = w * vs[i][j] + c * r1 * (pbest[i][j] - xs[i][j]) + c * r2 * (gbest[j] - xs[i][j]);
                vs[i][j] = v.clamp(-vmax[j], vmax[j]);
                xs[i][j] += vs[i][j];
            }
            clamp_into(&mut xs[i], &lo, &hi);
            let f = obj.eval(&xs[i]);
            if f < pbest_f[i] {
                pbest_f[i] = f;
                pbest[i].copy_from_slice(&xs[i]);
                if f < gbest_f {
                    gbest_f = f;
                    gbest.copy_from_slice(&xs[i]);
                }
            }
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Generational real-coded GA: tournament selection, blend crossover,
/// Gaussian mutation with a geometrically decaying scale.
fn ga(h: &HyperParams, pop: usize, iters: usize, obj: &mut Objective, rng: &mut seed::Rng) {
    let d = obj.problem.dim;
    let (lo, hi) = (obj.problem.lo.clone(), obj.problem.hi.clone());
    let (mut xs, mut fs) = init_population(obj, pop, rng);
    let tsize = (h.selection_pressure.round() as usize).clamp(1, pop);
    let mut sigma: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.1 * (u - l)).collect();
    let tournament = |fs: &[f64], rng: &mut seed::Rng| {
        let mut best = rng.gen_range(0..pop);
        for _ in 1..tsize {
            let c = rng.gen_range(0..pop);
            if fs[c] < fs[best] {
                best = c;
            }
        }
        best
    };
    for _ in 1..iters {
        let mut next = Vec::with_capacity(pop);
        let mut next_f = Vec::with_capacity(pop);
        if h.elitism {
            let b = argmin(&fs);
            next.push(xs[b].clone());
            next_f.push(fs[b]);
        }
        while next.len() < pop {
            let p1 = tournament(&fs, rng);
            let p2 = tournament(&fs, rng);
            let mut child = xs[p1].clone();
            if rng.gen::<f64>() < h.crossover_rate {
                for j in 0..d {
                    let u = rng.gen_range(-0.25..=1.25);
                    child[j] += u * (xs[p2][j] - xs[p1][j]);
                }
            }
            for j in 0..d {
                if rng.gen::<f64>() < h.mutation_rate {
                    child[j] += sigma[j] * gauss(rng);
                }
            }
            clamp_into(&mut child, &lo, &hi);
            next_f.push(obj.eval(&child));
            next.push(child);
        }
        xs = next;
        fs = next_f;
        sigma.iter_mut().for_each(|s| *s *= STEP_DECAY);
    }
}

/// Simulated annealing with Gaussian neighbours and geometric cooling.
fn sa(h: &HyperParams, pop: usize, iters: usize, obj: &mut Objective, rng: &mut seed::Rng) {
    let d = obj.problem.dim;
    let (lo, hi) = (obj.problem.lo.clone(), obj.problem.hi.clone());
    let mut x = uniform_point(&lo, &hi, rng);
    let mut fx = obj.eval(&x);
    let mut step: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| h.mutation_rate * (u - l)).collect();
    let mut temp = 1.0;
    let mut cand = vec![0.0; d];
    for t in 0..iters {
        let start = if t == 0 { 1 } else { 0 };
        for _ in start..pop {
            for j in 0..d {
                cand[j] = x[j] + step[j] * gauss(rng);
            }
            clamp_into(&mut cand, &lo, &hi);
            let fc = obj.eval(&cand);
            let accept = fc <= fx || rng.gen::<f64>() < (-(fc - fx) / temp).exp();
            if accept {
                x.copy_from_slice(&cand);
                fx = fc;
            }
        }
        temp *= h.inertia_or_cooling;
        step.iter_mut().for_each(|s| *s *= STEP_DECAY);
    }
}

/// Uniform sampling in a box around the incumbent whose half-width shrinks
/// geometrically; the first iteration samples the whole domain.
fn random_search(h: &HyperParams, pop: usize, iters: usize, obj: &mut Objective, rng: &mut seed::Rng) {
    let d = obj.problem.dim;
    let (lo, hi) = (obj.problem.lo.clone(), obj.problem.hi.clone());
    let mut best_x = vec![0.0; d];
    let mut best_f = f64::INFINITY;
    let mut radius: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (u - l)).collect();
    for t in 0..iters {
        for _ in 0..pop {
            let x: Vec<f64> = if t == 0 {
                uniform_point(&lo, &hi, rng)
            } else {
                (0..d)
                    .map(|j| {
                        let a = (best_x[j] - radius[j]).max(lo[j]);
                        let b = (best_x[j] + radius[j]).min(hi[j]);
                        rng.gen_range(a..=b)
                    })
                    .collect()
            };
            let f = obj.eval(&x);
            if f < best_f {
                best_f = f;
                best_x = x;
            }
        }
        radius.iter_mut().for_each(|r| *r *= h.inertia_or_cooling);
    }
}

/// Shuffle helper used by permutation tests and experiment subsampling.
pub fn shuffled_ids(n: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng(seed));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ExprNode, Op, OperatorTable};

    pub(crate) fn sphere(dim: usize) -> ProblemInstance {
        let sq = |i| ExprNode::binary(Op::Mul, ExprNode::var(i), ExprNode::var(i));
        let mut tree = sq(0);
        for i in 1..dim {
            tree = ExprNode::binary(Op::Add, tree, sq(i));
        }
        ProblemInstance::from_tree(0, tree, dim, (-5.0, 5.0), &OperatorTable::default(), 32, 0.0)
    }

    #[test]
    fn degenerate_random_search_is_one_sample() {
        let mut a = AlgorithmSpec::default_for(0, Family::RandomSearch);
        a.hyperparams.population_size = 1;
        a.hyperparams.iterations = 1;
        let p = sphere(3);
        let r = run(&a, &p, 9);
        assert_eq!(r.evals_used, 1);
        let x = uniform_point(&p.lo, &p.hi, &mut seed::rng(9));
        assert_eq!(r.best_value, p.evaluate(&x).unwrap());
    }

    #[test]
    fn runs_are_deterministic() {
        let p = sphere(4);
        for a in make_portfolio(5, 3).unwrap() {
            assert_eq!(run(&a, &p, 17), run(&a, &p, 17));
        }
    }

    #[test]
    fn cycling_and_distinct_features() {
        let five = make_portfolio(5, 1).unwrap();
        let fams: Vec<Family> = five.iter().map(|a| a.family).collect();
        assert_eq!(fams, Family::ALL);
        let ten = make_portfolio(10, 1).unwrap();
        for f in Family::ALL {
            let of: Vec<_> = ten.iter().filter(|a| a.family == f).collect();
            assert_eq!(of.len(), 2);
            assert_ne!(of[0].hyperparams, of[1].hyperparams);
        }
        let all = make_portfolio(64, 2).unwrap();
        for i in 0..all.len() {
            assert_eq!(all[i].id, i as u32);
            for j in 0..i {
                assert_ne!(all[i].predefined_features, all[j].predefined_features);
            }
        }
        assert!(make_portfolio(0, 1).is_err());
        assert!(make_portfolio(65, 1).is_err());
    }

    #[test]
    fn feature_scale_is_bounded() {
        for a in make_portfolio(64, 8).unwrap() {
            assert_eq!(a.predefined_features.len(), ALGO_FEATURE_LEN);
            assert!(a.predefined_features.iter().all(|v| (0.0..=1.2).contains(v)));
        }
    }

    #[test]
    fn budget_is_respected() {
        let p = sphere(2);
        for a in make_portfolio(10, 4).unwrap() {
            let a = a.with_budget(10, 7);
            let r = run(&a, &p, 1);
            assert!(r.evals_used <= 70, "{:?} used {}", a.family, r.evals_used);
            assert!(r.best_value.is_finite());
        }
    }
}
