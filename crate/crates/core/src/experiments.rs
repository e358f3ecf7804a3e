//! One-factor sweeps: problem count, algorithm count, distribution shift,
//! problem count under shift, and model width.
//!
//! Every scenario reduces to a list of sweep points, each fixing the training
//! set size, the operator table of the training distribution, the training and
//! test algorithm sets and the width multiplier. Problems come from two labeled
//! pools (training distribution, test distribution); each seed draws its own
//! training subset from the training pool and trains fresh models.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundInputs, Cor2Which};
use crate::distshift::{self, GenerativeConfig};
use crate::error::{Error, Result};
use crate::labeling::{self, PerformanceMatrix, Split};
use crate::neural;
use crate::portfolio::{make_portfolio_from, AlgorithmSpec, Family};
use crate::problem::{generate_problems, OperatorTable, ProblemInstance, ProblemSpec};
use crate::seed::{self, derive_seed};
use crate::selectors::{self, Catalog, FitHyper, ModelKind, SelectorModel};

pub const RESULTS_HEADER: &str = "scenario,sweep_value,model,seed,error_S,error_T,gap,bound,chi2,fallback,wall_time_s";

const TAG_POOL: u64 = 1;
const TAG_LABEL: u64 = 2;
const TAG_SUBSET: u64 = 3;
const TAG_MODEL: u64 = 4;
const TAG_CHI2: u64 = 5;
const TAG_SHIFT: u64 = 6;
const TAG_PORTFOLIO: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ProblemScale,
    AlgoScale,
    DistShift,
    ScaleUnderShift,
    ModelComplexity,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::ProblemScale,
        Scenario::AlgoScale,
        Scenario::DistShift,
        Scenario::ScaleUnderShift,
        Scenario::ModelComplexity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ProblemScale => "problem_scale",
            Scenario::AlgoScale => "algo_scale",
            Scenario::DistShift => "dist_shift",
            Scenario::ScaleUnderShift => "scale_under_shift",
            Scenario::ModelComplexity => "model_complexity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown scenario `{s}`")))
    }

    fn tag(self) -> u64 {
        self as u64 + 100
    }
}

/// What a `dist_shift` sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftAxis {
    /// Sweep value = number of unseen algorithms added to the test set.
    #[default]
    Algorithms,
    /// Sweep value = fraction of operators down-weighted in the training distribution.
    Operators,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    pub axis: ShiftAxis,
    /// Unseen algorithms in the test set (fixed unless swept).
    pub n_new: usize,
    /// Fraction of operators whose training weight is scaled (fixed unless swept).
    pub operator_fraction: f64,
    pub operator_scale: f64,
    pub smoothing_eps: f64,
    pub n_mc: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            axis: ShiftAxis::Algorithms,
            n_new: 0,
            operator_fraction: 0.0,
            operator_scale: 0.1,
            smoothing_eps: 0.0,
            n_mc: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortfolioConfig {
    pub seed: u64,
    /// `None` keeps each algorithm's own population size.
    pub population_size: Option<usize>,
    pub iterations: usize,
    /// Families cycled through by algorithm id.
    pub families: Vec<Family>,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            seed: 0,
            population_size: None,
            iterations: 25,
            families: Family::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    /// Test distribution; the training distribution equals it unless shifted.
    pub problem: ProblemSpec,
    pub portfolio: PortfolioConfig,
    pub n_runs: usize,
    /// Training problems when not swept.
    pub n_train: usize,
    pub n_test: usize,
    /// Training algorithms when not swept.
    pub n_algos: usize,
    pub width_multiplier: f64,
    pub fit: FitHyper,
    /// Per-model training overrides.
    pub fit_overrides: BTreeMap<ModelKind, FitHyper>,
    pub shift: ShiftConfig,
    /// Keep only problems whose best mean value is attained by one algorithm.
    pub unique_best: bool,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            problem: ProblemSpec::new(OperatorTable::default(), 3, 4),
            portfolio: PortfolioConfig::default(),
            n_runs: labeling::DEFAULT_N_RUNS,
            n_train: 2000,
            n_test: 1000,
            n_algos: 10,
            width_multiplier: 1.0,
            fit: FitHyper {
                epochs: 30,
                lr: 0.03,
                batch_size: Some(128),
                steps: None,
                seed: 0,
            },
            fit_overrides: BTreeMap::new(),
            shift: ShiftConfig::default(),
            unique_best: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub sweep: Vec<f64>,
    pub n_seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "all_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub base: BaseConfig,
}

fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

/// Training-side and test-side settings of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub value: f64,
    pub s_p: usize,
    pub n_algos: usize,
    pub n_new: usize,
    pub operator_fraction: f64,
    pub width_multiplier: f64,
}

impl Point {
    /// Points sharing this key train identical models.
    fn train_key(&self) -> (usize, usize, u64, u64) {
        (self.s_p, self.n_algos, self.operator_fraction.to_bits(), self.width_multiplier.to_bits())
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("{what} sweep values must be non-negative integers, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::InvalidArgument("sweep must be non-empty".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidArgument("n_seeds must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no models selected".into()));
        }
        let b = &self.base;
        b.problem.validate()?;
        if b.n_test == 0 || b.n_runs == 0 {
            return Err(Error::InvalidArgument("n_test and n_runs must be >= 1".into()));
        }
        for p in self.points()? {
            if p.s_p == 0 || p.n_algos == 0 {
                return Err(Error::InvalidArgument("sweep point with no training problems or algorithms".into()));
            }
            if !(0.0..=1.0).contains(&p.operator_fraction) {
                return Err(Error::InvalidArgument(format!("operator fraction must lie in [0, 1], got {}", p.operator_fraction)));
            }
            selectors::hidden_widths(p.width_multiplier)?;
        }
        Ok(())
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        let b = &self.base;
        self.sweep
            .iter()
            .map(|&v| {
                let mut p = Point {
                    value: v,
                    s_p: b.n_train,
                    n_algos: b.n_algos,
                    n_new: b.shift.n_new,
                    operator_fraction: b.shift.operator_fraction,
                    width_multiplier: b.width_multiplier,
                };
                match self.scenario {
                    Scenario::ProblemScale => {
                        p.s_p = as_count(v, "problem_scale")?;
                        p.n_new = 0;
                        p.operator_fraction = 0.0;
                    }
                    Scenario::AlgoScale => {
                        p.n_algos = as_count(v, "algo_scale")?;
                        p.n_new = 0;
                        p.operator_fraction = 0.0;
                    }
                    Scenario::DistShift => match b.shift.axis {
                        ShiftAxis::Algorithms => p.n_new = as_count(v, "dist_shift")?,
                        ShiftAxis::Operators => p.operator_fraction = v,
                    },
                    Scenario::ScaleUnderShift => p.s_p = as_count(v, "scale_under_shift")?,
                    Scenario::ModelComplexity => p.width_multiplier = v,
                }
                Ok(p)
            })
            .collect()
    }

    fn universe_size(&self, points: &[Point]) -> usize {
        points.iter().map(|p| p.n_algos + p.n_new).max().unwrap_or(0)
    }

    fn reports_chi2(&self) -> bool {
        matches!(
            self.scenario,
            Scenario::DistShift | Scenario::ScaleUnderShift | Scenario::ModelComplexity
        ) && (self.scenario != Scenario::ModelComplexity || self.base.shift.n_new > 0 || self.base.shift.operator_fraction > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub sweep_value: f64,
    pub model: ModelKind,
    pub seed: u64,
    pub error_s: f64,
    pub error_t: f64,
    pub gap: f64,
    pub bound: Option<f64>,
    pub chi2: Option<f64>,
    pub fallback: bool,
    pub wall_time_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    pub fn key(&self) -> (Scenario, u64, ModelKind, u64) {
        (self.scenario, self.sweep_value.to_bits(), self.model, self.seed)
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario.name(),
            self.sweep_value,
            self.model,
            self.seed,
            self.error_s,
            self.error_t,
            self.gap,
            opt(self.bound),
            opt(self.chi2),
            self.fallback,
            self.wall_time_s
        )
    }

    /// The CSV line without the wall-clock column.
    pub fn deterministic_line(&self) -> String {
        let l = self.to_csv_line();
        l[..l.rfind(',').expect("has columns")].to_string()
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_t
    }
}

fn parse_f(s: &str, col: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("results.csv: bad {col} `{s}`")))
}

fn parse_opt(s: &str, col: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f(s, col).map(Some)
    }
}

pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        _ => return Err(Error::Parse("results.csv: missing or unexpected header".into())),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 11 {
                return Err(Error::Parse(format!("results.csv: expected 11 columns, got {}", c.len())));
            }
            Ok(ResultRow {
                scenario: Scenario::parse(c[0])?,
                sweep_value: parse_f(c[1], "sweep_value")?,
                model: ModelKind::parse(c[2]).map_err(|e| Error::Parse(e.to_string()))?,
                seed: c[3].parse().map_err(|_| Error::Parse(format!("results.csv: bad seed `{}`", c[3])))?,
                error_s: parse_f(c[4], "error_S")?,
                error_t: parse_f(c[5], "error_T")?,
                gap: parse_f(c[6], "gap")?,
                bound: parse_opt(c[7], "bound")?,
                chi2: parse_opt(c[8], "chi2")?,
                fallback: c[9]
                    .parse()
                    .map_err(|_| Error::Parse(format!("results.csv: bad fallback `{}`", c[9])))?,
                wall_time_s: parse_f(c[10], "wall_time_s")?,
            })
        })
        .collect()
}

pub fn write_results_csv(rows: &[ResultRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

/// A labeled pool of problems drawn from one distribution.
pub struct Pool {
    pub problems: Vec<ProblemInstance>,
    pub perf: PerformanceMatrix,
}

/// Everything shared across seeds: algorithm universe and labeled pools.
pub struct Workspace {
    pub universe: Vec<AlgorithmSpec>,
    /// Training pools keyed by operator fraction bits.
    pub train_pools: HashMap<u64, Pool>,
    pub test_pool: Pool,
    pub tables: HashMap<u64, OperatorTable>,
}

fn shifted_table(cfg: &ExperimentConfig, fraction: f64) -> Result<OperatorTable> {
    let b = &cfg.base;
    if fraction == 0.0 {
        return Ok(b.problem.table.clone());
    }
    distshift::apply_problem_shift(
        &b.problem.table,
        fraction,
        b.shift.operator_scale,
        derive_seed(cfg.master_seed, &[TAG_SHIFT]),
    )
}

/// Whether exactly one algorithm attains the row minimum.
pub fn unique_best(row: &[f64]) -> bool {
    let m = row.iter().copied().fold(f64::INFINITY, f64::min);
    row.iter().filter(|v| **v == m).count() == 1
}

/// Problem ids of pool `tag` start at `tag << 40`.
fn labeled_pool(cfg: &ExperimentConfig, spec: &ProblemSpec, n: usize, tag: u64, universe: &[AlgorithmSpec], jobs: usize) -> Result<Pool> {
    let seed = derive_seed(cfg.master_seed, &[TAG_POOL, tag]);
    let label_seed = derive_seed(cfg.master_seed, &[TAG_LABEL]);
    let mut next = tag << 40;
    let mut problems = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let (mut drawn, mut kept) = (0usize, 0usize);
    while problems.len() < n {
        let need = n - problems.len();
        let batch = if cfg.base.unique_best && kept > 0 {
            (need * drawn).div_ceil(kept) + need / 10 + 1
        } else {
            need
        };
        let ps = generate_problems(spec, batch, next, seed, jobs)?;
        next += batch as u64;
        let perf = labeling::label(&ps, universe, cfg.base.n_runs, label_seed, jobs)?;
        drawn += batch;
        if drawn > 100 * n.max(10) {
            return Err(Error::InvalidArgument(format!(
                "only {} of {drawn} generated problems have a unique best algorithm",
                problems.len()
            )));
        }
        for (p, row) in ps.into_iter().zip(perf.mean_best) {
            if problems.len() < n && (!cfg.base.unique_best || unique_best(&row)) {
                kept += 1;
                problems.push(p);
                rows.push(row);
            }
        }
    }
    let perf = PerformanceMatrix::from_means(
        problems.iter().map(|p| p.id).collect(),
        universe.iter().map(|a| a.id).collect(),
        rows,
        cfg.base.n_runs,
    )?;
    Ok(Pool { problems, perf })
}

/// Generate the algorithm universe and label every pool the sweep needs.
pub fn prepare(cfg: &ExperimentConfig, jobs: usize) -> Result<Workspace> {
    cfg.validate()?;
    let points = cfg.points()?;
    let b = &cfg.base;
    let universe: Vec<AlgorithmSpec> = make_portfolio_from(cfg.universe_size(&points), derive_seed(b.portfolio.seed, &[TAG_PORTFOLIO]), &b.portfolio.families)?
        .iter()
        .map(|a| a.with_budget(b.portfolio.population_size.unwrap_or(a.hyperparams.population_size), b.portfolio.iterations))
        .collect();
    let test_pool = labeled_pool(cfg, &b.problem, b.n_test, 0, &universe, jobs)?;
    let mut train_pools = HashMap::new();
    let mut tables = HashMap::new();
    for p in &points {
        let key = p.operator_fraction.to_bits();
        if train_pools.contains_key(&key) {
            continue;
        }
        let size = points
            .iter()
            .filter(|q| q.operator_fraction.to_bits() == key)
            .map(|q| q.s_p)
            .max()
            .expect("non-empty");
        let table = shifted_table(cfg, p.operator_fraction)?;
        let spec = ProblemSpec {
            table: table.clone(),
            ..b.problem.clone()
        };
        let pool = labeled_pool(cfg, &spec, size, 1 + train_pools.len() as u64, &universe, jobs)?;
        train_pools.insert(key, pool);
        tables.insert(key, table);
    }
    Ok(Workspace {
        universe,
        train_pools,
        test_pool,
        tables,
    })
}

/// Bound inputs for a trained model on `split`: norms of its network and the
/// squared feature norms of its training instances.
pub fn bound_inputs(model: &SelectorModel, cat: &Catalog, split: &Split) -> Result<BoundInputs> {
    let kind = model.kind;
    let norm = neural::norms(&model.net, kind == ModelKind::ModelA);
    let mut inp = BoundInputs::new(
        split.train_problems.len(),
        split.train_algos.len(),
        split.test_problems.len(),
        split.test_algos.len(),
        kind.loss_lipschitz(),
        norm,
    );
    let (sum, max) = selectors::instance_sq_norms(model, cat)?;
    inp.sum_sq_norms = sum;
    inp.max_sq_norm = max;
    inp.gamma_margin = model.bindings.gamma_margin;
    inp.delta = selectors::DEFAULT_DELTA;
    if kind == ModelKind::ModelA {
        inp.sup_pf_af = selectors::sup_pf_af(model)?;
    }
    Ok(inp)
}

/// The bound reported for each model kind; ModelB switches to the shifted
/// form when a chi-square divergence is given.
pub fn model_bound(kind: ModelKind, inp: &BoundInputs, error_s: f64, chi2: Option<f64>) -> Result<bounds::BoundReport> {
    match kind {
        ModelKind::ModelA => bounds::thm2_transductive_bound(inp, error_s),
        ModelKind::ModelReg => bounds::cor2_bounds(inp, error_s, Cor2Which::Reg),
        ModelKind::ModelCla => bounds::cor2_bounds(inp, error_s, Cor2Which::Cla),
        ModelKind::ModelB => match chi2 {
            Some(c) => {
                let inp = BoundInputs { chi2: c, ..inp.clone() };
                bounds::cor5_shifted_bound(&inp, error_s)
            }
            None => bounds::thm4_inductive_bound(inp, error_s),
        },
    }
}

fn bound_for(model: &SelectorModel, cat: &Catalog, split: &Split, error_s: f64, chi2: Option<f64>) -> Result<Option<f64>> {
    let inp = bound_inputs(model, cat, split)?;
    Ok(model_bound(model.kind, &inp, error_s, chi2)?.value)
}

fn chi2_for(cfg: &ExperimentConfig, ws: &Workspace, p: &Point, idx: usize, jobs: usize) -> Result<f64> {
    let b = &cfg.base;
    let order = algo_order(ws);
    let train_ids = order[..p.n_algos].to_vec();
    let test_ids = distshift::apply_algo_shift(&train_ids, p.n_new, &order)?;
    let train_table = &ws.tables[&p.operator_fraction.to_bits()];
    let (dim, depth) = (b.problem.dim, b.problem.max_depth);
    let train = GenerativeConfig::uniform(train_table.clone(), &train_ids, dim, depth);
    let test = GenerativeConfig::uniform(b.problem.table.clone(), &test_ids, dim, depth);
    let rep = distshift::divergence(
        &test,
        &train,
        b.shift.smoothing_eps,
        b.shift.n_mc,
        derive_seed(cfg.master_seed, &[TAG_CHI2, idx as u64]),
        jobs,
    )?;
    Ok(rep.chi2_joint)
}

/// Training algorithms are a prefix of the universe, so five or more cover
/// every family; unseen test algorithms are the ones that follow.
fn algo_order(ws: &Workspace) -> Vec<u32> {
    ws.universe.iter().map(|a| a.id).collect()
}

/// Problems and algorithms of one (seed, point) cell.
fn cell_split(cfg: &ExperimentConfig, ws: &Workspace, p: &Point, seed_idx: u64) -> Result<Split> {
    let pool = &ws.train_pools[&p.operator_fraction.to_bits()];
    let mut ids: Vec<u64> = pool.problems.iter().map(|q| q.id).collect();
    ids.shuffle(&mut seed::derived_rng(cfg.master_seed, &[TAG_SUBSET, seed_idx, p.operator_fraction.to_bits()]));
    ids.truncate(p.s_p);
    ids.sort_unstable();
    let order = algo_order(ws);
    let mut train_algos = order[..p.n_algos].to_vec();
    train_algos.sort_unstable();
    let test_algos = distshift::apply_algo_shift(&train_algos, p.n_new, &order)?;
    let test_ids = ws.test_pool.problems.iter().map(|q| q.id).collect();
    Ok(Split::new(ids, test_ids, train_algos, test_algos))
}

fn kind_index(kind: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|k| *k == kind).expect("listed") as u64
}

fn hyper_for(cfg: &ExperimentConfig, kind: ModelKind, model_seed: u64) -> FitHyper {
    let mut h = cfg.base.fit_overrides.get(&kind).cloned().unwrap_or_else(|| cfg.base.fit.clone());
    h.seed = derive_seed(model_seed, &[h.seed]);
    h
}

fn train_model(cfg: &ExperimentConfig, cat: &Catalog, perf: &PerformanceMatrix, split: &Split, p: &Point, kind: ModelKind, seed_idx: u64, point_idx: usize) -> Result<SelectorModel> {
    let model_seed = derive_seed(cfg.master_seed, &[TAG_MODEL, cfg.scenario.tag(), seed_idx, kind_index(kind), point_idx as u64]);
    let mut model = selectors::build(kind, cat, &split.train_problems, &split.train_algos, p.width_multiplier, model_seed)?;
    selectors::fit(&mut model, cat, perf, &hyper_for(cfg, kind, model_seed))?;
    Ok(model)
}

/// Run the full factorial `seeds x sweep x models`.
///
/// With `out`, rows already present in that results file are skipped and new
/// rows are appended as each `(seed, point)` cell completes.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, jobs: usize) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = match out {
        Some(path) if path.exists() => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            read_results_csv(&text)?
        }
        _ => Vec::new(),
    };
    let done: HashSet<_> = rows.iter().map(ResultRow::key).collect();
    let points = cfg.points()?;
    let todo = |v: f64, k: ModelKind, s: u64| !done.contains(&(cfg.scenario, v.to_bits(), k, s));
    let any_todo = (0..cfg.n_seeds as u64).any(|s| points.iter().any(|p| cfg.models.iter().any(|k| todo(p.value, *k, s))));
    if !any_todo {
        return Ok(rows);
    }
    let mut writer = match out {
        Some(path) => {
            let fresh = !path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if fresh {
                writeln!(f, "{RESULTS_HEADER}").map_err(|e| Error::io(path, e))?;
            }
            Some((path, f))
        }
        None => None,
    };

    let ws = prepare(cfg, jobs)?;
    let mut all_problems: Vec<ProblemInstance> = ws.test_pool.problems.clone();
    let mut perf = ws.test_pool.perf.clone();
    let mut keys: Vec<&u64> = ws.train_pools.keys().collect();
    keys.sort();
    for k in keys {
        let pool = &ws.train_pools[k];
        all_problems.extend(pool.problems.iter().cloned());
        perf = merge(&perf, &pool.perf)?;
    }
    let cat = Catalog::new(&all_problems, &ws.universe);
    let chi2: Vec<Option<f64>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| cfg.reports_chi2().then(|| chi2_for(cfg, &ws, p, i, jobs)).transpose())
        .collect::<Result<_>>()?;

    for s in 0..cfg.n_seeds as u64 {
        let mut trained: HashMap<((usize, usize, u64, u64), ModelKind), (SelectorModel, f64)> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let kinds: Vec<ModelKind> = cfg.models.iter().copied().filter(|k| todo(p.value, *k, s)).collect();
            if kinds.is_empty() {
                continue;
            }
            let split = cell_split(cfg, &ws, p, s).map_err(|e| tag(cfg, p, None, s, e))?;
            let first_point = points.iter().position(|q| q.train_key() == p.train_key()).expect("self");
            let cell = |kind: ModelKind| -> Result<(SelectorModel, f64, ResultRow)> {
                let t0 = Instant::now();
                let model = match trained.get(&(p.train_key(), kind)) {
                    Some((m, _)) => m.clone(),
                    None => train_model(cfg, &cat, &perf, &split, p, kind, s, first_point)?,
                };
                let train_time = t0.elapsed().as_secs_f64();
                let eval = selectors::evaluate(&model, &cat, &split, &perf)?;
                let bound = bound_for(&model, &cat, &split, eval.error_s, chi2[i])?;
                let row = ResultRow {
                    scenario: cfg.scenario,
                    sweep_value: p.value,
                    model: kind,
                    seed: s,
                    error_s: eval.error_s,
                    error_t: eval.error_t,
                    gap: eval.gap,
                    bound,
                    chi2: chi2[i],
                    fallback: kind == ModelKind::ModelA && eval.fallback,
                    wall_time_s: t0.elapsed().as_secs_f64(),
                };
                Ok((model, train_time, row))
            };
            let results: Vec<Result<(SelectorModel, f64, ResultRow)>> =
                seed::with_jobs(jobs, || kinds.par_iter().map(|k| cell(*k).map_err(|e| tag(cfg, p, Some(*k), s, e))).collect());
            for (kind, r) in kinds.iter().zip(results) {
                let (model, t, row) = r?;
                if let Some((path, f)) = writer.as_mut() {
                    writeln!(f, "{}", row.to_csv_line()).map_err(|e| Error::io(*path, e))?;
                    f.flush().map_err(|e| Error::io(*path, e))?;
                }
                rows.push(row);
                trained.entry((p.train_key(), *kind)).or_insert((model, t));
            }
        }
    }
    Ok(rows)
}

fn tag(cfg: &ExperimentConfig, p: &Point, kind: Option<ModelKind>, seed: u64, e: Error) -> Error {
    let model = kind.map(|k| format!(" {k}")).unwrap_or_default();
    Error::Cell {
        cell: format!("{}[sweep={}{model} seed={seed}]", cfg.scenario.name(), p.value),
        source: Box::new(e),
    }
}

fn merge(a: &PerformanceMatrix, b: &PerformanceMatrix) -> Result<PerformanceMatrix> {
    if a.algo_ids != b.algo_ids {
        return Err(Error::InvalidArgument("cannot merge matrices over different algorithms".into()));
    }
    let mut ids = a.problem_ids.clone();
    ids.extend(&b.problem_ids);
    let mut rows = a.mean_best.clone();
    rows.extend(b.mean_best.iter().cloned());
    PerformanceMatrix::from_means(ids, a.algo_ids.clone(), rows, a.n_runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub sweep_value: f64,
    pub model: ModelKind,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub bound_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub rows: Vec<SummaryRow>,
    /// Spearman correlation of mean accuracy with the sweep value, per model.
    pub spearman: BTreeMap<ModelKind, f64>,
}

impl Summary {
    pub fn row(&self, sweep_value: f64, model: ModelKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.sweep_value == sweep_value && r.model == model)
    }

    /// Mean accuracy per sweep value for one model, in sweep order.
    pub fn series(&self, model: ModelKind) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.model == model)
            .map(|r| (r.sweep_value, r.accuracy_mean, r.accuracy_std))
            .collect()
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Group rows by `(sweep_value, model)`.
pub fn summarize(rows: &[ResultRow]) -> Result<Summary> {
    let first = rows.first().ok_or_else(|| Error::InvalidArgument("no rows to summarize".into()))?;
    if rows.iter().any(|r| r.scenario != first.scenario) {
        return Err(Error::InvalidArgument("rows mix several scenarios".into()));
    }
    let mut groups: BTreeMap<(ModelKind, u64), Vec<&ResultRow>> = BTreeMap::new();
    let mut order: Vec<f64> = Vec::new();
    for r in rows {
        if !order.iter().any(|v| v.to_bits() == r.sweep_value.to_bits()) {
            order.push(r.sweep_value);
        }
        groups.entry((r.model, r.sweep_value.to_bits())).or_default().push(r);
    }
    order.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut spearman_by = BTreeMap::new();
    let models: Vec<ModelKind> = ModelKind::ALL.into_iter().filter(|k| rows.iter().any(|r| r.model == *k)).collect();
    for m in models {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for v in &order {
            let Some(g) = groups.get(&(m, v.to_bits())) else { continue };
            let acc: Vec<f64> = g.iter().map(|r| r.accuracy()).collect();
            let gaps: Vec<f64> = g.iter().map(|r| r.gap).collect();
            let bounds: Vec<f64> = g.iter().filter_map(|r| r.bound).collect();
            let (am, asd) = mean_std(&acc);
            let (gm, gsd) = mean_std(&gaps);
            out.push(SummaryRow {
                scenario: first.scenario,
                sweep_value: *v,
                model: m,
                n: g.len(),
                accuracy_mean: am,
                accuracy_std: asd,
                gap_mean: gm,
                gap_std: gsd,
                bound_mean: (!bounds.is_empty()).then(|| mean_std(&bounds).0),
            });
            xs.push(*v);
            ys.push(am);
        }
        spearman_by.insert(m, spearman(&xs, &ys));
    }
    Ok(Summary {
        scenario: first.scenario,
        rows: out,
        spearman: spearman_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64, m: ModelKind, seed: u64, err_t: f64) -> ResultRow {
        ResultRow {
            scenario: Scenario::ProblemScale,
            sweep_value: v,
            model: m,
            seed,
            error_s: 0.1,
            error_t: err_t,
            gap: err_t - 0.1,
            bound: None,
            chi2: None,
            fallback: false,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[row(1.0, ModelKind::ModelB, 0, 0.3)]).unwrap();
        assert_eq!(s.rows[0].accuracy_std, 0.0);
        let s = summarize(&[row(1.0, ModelKind::ModelB, 0, 0.6), row(1.0, ModelKind::ModelB, 1, 0.4)]).unwrap();
        assert!((s.rows[0].accuracy_mean - 0.5).abs() < 1e-12);
        assert!((s.rows[0].accuracy_std - 0.1414).abs() < 1e-4);
        let rows: Vec<_> = (0..5).map(|i| row(i as f64 * 100.0, ModelKind::ModelA, 0, 0.9 - i as f64 * 0.1)).collect();
        assert_eq!(summarize(&rows).unwrap().spearman[&ModelKind::ModelA], 1.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn spearman_ties_and_reversal() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[5.0, 5.0]).is_nan());
    }

    #[test]
    fn csv_round_trip() {
        let mut r = row(500.0, ModelKind::ModelCla, 3, 0.25);
        r.bound = Some(1.5);
        r.chi2 = Some(f64::INFINITY);
        let mut buf = Vec::new();
        write_results_csv(&[r.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(read_results_csv(&text).unwrap(), vec![r]);
    }

    #[test]
    fn points_per_scenario() {
        let mut cfg = ExperimentConfig {
            scenario: Scenario::ProblemScale,
            sweep: vec![500.0, 1000.0, 2000.0, 4000.0],
            n_seeds: 5,
            master_seed: 0,
            models: all_models(),
            base: BaseConfig::default(),
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.points().unwrap().iter().map(|p| p.s_p).collect::<Vec<_>>(), vec![500, 1000, 2000, 4000]);
        cfg.scenario = Scenario::ModelComplexity;
        cfg.sweep = (5..=15).map(|k| k as f64 / 10.0).collect();
        assert_eq!(cfg.points().unwrap().len(), 11);
        cfg.scenario = Scenario::DistShift;
        cfg.sweep = vec![0.5];
        assert!(cfg.validate().is_err());
        cfg.sweep = vec![];
        assert!(cfg.validate().is_err());
    }
}
