//! The four selector families.
//!
//! - `ModelA`: one-hot `(problem, algorithm)` input into an embedding layer
//!   `W0 = diag(PF, AF)`; PF holds the frozen training-problem features, AF is
//!   a trainable embedding per training algorithm.
//! - `ModelB`: problem features concatenated with predefined algorithm features.
//! - `ModelReg`: problem features to one regression output per algorithm.
//! - `ModelCla`: problem features to softmax logits over algorithms.
//!
//! Pair models score `(p, a)` through a first layer split as
//! `W [f_p; g_a] = W_p f_p + W_a g_a`, so each side is multiplied once per batch.

use std::collections::{HashMap, HashSet};

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{argmin_by_id, PerformanceMatrix, Split};
use crate::neural::{self, Activation, Dataset, Freeze, Inputs, Layer, Loss, Network, NetworkRecord, TrainConfig, TrainReport};
use crate::portfolio::{AlgorithmSpec, ALGO_FEATURE_LEN};
use crate::problem::ProblemInstance;

pub const REFERENCE_WIDTH: usize = 128;
pub const REFERENCE_DEPTH: usize = 3;
pub const DEFAULT_GAMMA_MARGIN: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.05;
/// Regression targets are per-problem z-scores clipped to this magnitude.
pub const TARGET_CLIP: f64 = 3.0;

const SCORE_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    ModelA,
    ModelB,
    ModelReg,
    ModelCla,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::ModelA, ModelKind::ModelB, ModelKind::ModelReg, ModelKind::ModelCla];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ModelA => "ModelA",
            ModelKind::ModelB => "ModelB",
            ModelKind::ModelReg => "ModelReg",
            ModelKind::ModelCla => "ModelCla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))
    }

    pub fn loss(self) -> Loss {
        match self {
            ModelKind::ModelA | ModelKind::ModelB => Loss::Bce,
            ModelKind::ModelReg => Loss::Mse,
            ModelKind::ModelCla => Loss::SoftmaxCe,
        }
    }

    /// Lipschitz constant of the training loss with respect to the model output.
    pub fn loss_lipschitz(self) -> f64 {
        match self {
            ModelKind::ModelA | ModelKind::ModelB => 0.25,
            ModelKind::ModelReg => 2.0 * TARGET_CLIP,
            ModelKind::ModelCla => 1.0,
        }
    }

    pub fn is_pair_model(self) -> bool {
        matches!(self, ModelKind::ModelA | ModelKind::ModelB)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Id lookup over the problems and algorithms a selector may see.
pub struct Catalog<'a> {
    problems: HashMap<u64, &'a ProblemInstance>,
    algos: HashMap<u32, &'a AlgorithmSpec>,
}

impl<'a> Catalog<'a> {
    pub fn new(problems: &'a [ProblemInstance], algos: &'a [AlgorithmSpec]) -> Self {
        Catalog {
            problems: problems.iter().map(|p| (p.id, p)).collect(),
            algos: algos.iter().map(|a| (a.id, a)).collect(),
        }
    }

    pub fn problem(&self, id: u64) -> Result<&'a ProblemInstance> {
        self.problems
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown problem id {id}")))
    }

    pub fn algo(&self, id: u32) -> Result<&'a AlgorithmSpec> {
        self.algos
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm id {id}")))
    }

    pub fn problems_of(&self, ids: &[u64]) -> Result<Vec<&'a ProblemInstance>> {
        ids.iter().map(|i| self.problem(*i)).collect()
    }

    pub fn algos_of(&self, ids: &[u32]) -> Result<Vec<&'a AlgorithmSpec>> {
        ids.iter().map(|i| self.algo(*i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    /// Problem feature length F.
    pub f: usize,
    /// Predefined algorithm feature length G.
    pub g: usize,
    /// ModelA embedding width.
    pub embed_dim: usize,
    pub train_problems: Vec<u64>,
    /// Training algorithms, in output / embedding order.
    pub train_algos: Vec<u32>,
    pub gamma_margin: f64,
    pub width_multiplier: f64,
}

impl Bindings {
    pub fn s_a(&self) -> usize {
        self.train_algos.len()
    }

    pub fn s_p(&self) -> usize {
        self.train_problems.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    pub kind: ModelKind,
    pub net: Network,
    pub bindings: Bindings,
}

/// Hidden widths `round(128 k)` for `k` in `[0.25, 2]`.
pub fn hidden_widths(k: f64) -> Result<Vec<usize>> {
    if !(0.25..=2.0).contains(&k) {
        return Err(Error::InvalidArgument(format!("width multiplier must lie in [0.25, 2], got {k}")));
    }
    Ok(vec![(REFERENCE_WIDTH as f64 * k).round() as usize; REFERENCE_DEPTH])
}

fn mlp_tail(input: usize, widths: &[usize], out: usize) -> (Vec<usize>, Vec<Activation>) {
    let mut sizes = vec![input];
    sizes.extend_from_slice(widths);
    sizes.push(out);
    let mut acts = vec![Activation::Relu; widths.len()];
    acts.push(Activation::Identity);
    (sizes, acts)
}

/// Build an untrained selector.
pub fn build(kind: ModelKind, cat: &Catalog, train_problems: &[u64], train_algos: &[u32], k: f64, seed: u64) -> Result<SelectorModel> {
    if train_problems.is_empty() || train_algos.is_empty() {
        return Err(Error::InvalidArgument("selector needs training problems and algorithms".into()));
    }
    let widths = hidden_widths(k)?;
    let problems = cat.problems_of(train_problems)?;
    let f = problems[0].features.len();
    if problems.iter().any(|p| p.features.len() != f) {
        return Err(Error::InvalidArgument("problem feature lengths differ".into()));
    }
    let g = ALGO_FEATURE_LEN;
    let s_a = train_algos.len();
    let bindings = Bindings {
        f,
        g,
        embed_dim: g,
        train_problems: train_problems.to_vec(),
        train_algos: train_algos.to_vec(),
        gamma_margin: DEFAULT_GAMMA_MARGIN,
        width_multiplier: k,
    };
    let net = match kind {
        ModelKind::ModelA => {
            let (e, s_p) = (bindings.embed_dim, problems.len());
            let (sizes, acts) = mlp_tail(f + e, &widths, 1);
            let tail = Network::new(&sizes, &acts, seed)?;
            let embed = Network::new(&[s_a, e], &[Activation::Identity], seed ^ 0xAF)?;
            let mut w0 = Array2::zeros((f + e, s_p + s_a));
            for (j, p) in problems.iter().enumerate() {
                w0.slice_mut(s![..f, j]).assign(&Array1::from(p.features.clone()));
            }
            w0.slice_mut(s![f.., s_p..]).assign(&embed.layers[0].w);
            let mut layers = vec![Layer {
                w: w0,
                b: Array1::zeros(f + e),
                activation: Activation::Identity,
            }];
            layers.extend(tail.layers);
            Network::from_layers(layers)?
        }
        ModelKind::ModelB => {
            let (sizes, acts) = mlp_tail(f + g, &widths, 1);
            Network::new(&sizes, &acts, seed)?
        }
        ModelKind::ModelReg | ModelKind::ModelCla => {
            let (sizes, acts) = mlp_tail(f, &widths, s_a);
            Network::new(&sizes, &acts, seed)?
        }
    };
    Ok(SelectorModel { kind, net, bindings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    /// When set, overrides `epochs` with enough epochs to take about this many SGD steps.
    pub steps: Option<usize>,
    pub seed: u64,
}

impl Default for FitHyper {
    fn default() -> Self {
        FitHyper {
            epochs: 300,
            lr: 0.05,
            batch_size: None,
            steps: None,
            seed: 0,
        }
    }
}

impl FitHyper {
    fn train_config(&self, n: usize) -> TrainConfig {
        let bs = self.batch_size.unwrap_or(if n <= 10_000 { n } else { 256 }).clamp(1, n);
        let epochs = match self.steps {
            Some(steps) => steps.div_ceil(n.div_ceil(bs)).max(1),
            None => self.epochs,
        };
        TrainConfig {
            epochs,
            lr: self.lr,
            batch_size: Some(bs),
            seed: self.seed,
        }
    }
}

fn sparse_row(features: &[f64], offset: usize, out: &mut Vec<(usize, f64)>) {
    out.extend(features.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (offset + i, *v)));
}

/// `sign(v) ln(1 + |v|)`; compresses heavy-tailed objective values, order preserving.
pub fn symlog(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Per-problem z-scores of `symlog(mean_best)` over the training algorithms,
/// clipped to `[-3, 3]`.
pub fn regression_targets(row: &[f64]) -> Vec<f64> {
    let row: Vec<f64> = row.iter().map(|v| symlog(*v)).collect();
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v / n).sum::<f64>();
    let sd = (row.iter().map(|v| ((v - mean) / n.sqrt()).powi(2)).sum::<f64>()).sqrt();
    row.iter()
        .map(|v| {
            if sd > 0.0 && sd.is_finite() {
                ((v - mean) / sd).clamp(-TARGET_CLIP, TARGET_CLIP)
            } else {
                0.0
            }
        })
        .collect()
}

impl SelectorModel {
    /// Training data exactly as `fit` consumes it.
    pub fn training_set(&self, cat: &Catalog, perf: &PerformanceMatrix) -> Result<Dataset> {
        let b = &self.bindings;
        let perf = perf.restrict_algos(&b.train_algos)?.restrict_problems(&b.train_problems)?;
        let problems = cat.problems_of(&b.train_problems)?;
        let algos = cat.algos_of(&b.train_algos)?;
        let (s_p, s_a) = (problems.len(), algos.len());
        let pos_weight = (s_a as f64 - 1.0).max(0.0);
        match self.kind {
            ModelKind::ModelA | ModelKind::ModelB => {
                let mut rows = Vec::with_capacity(s_p * s_a);
                let mut targets = Array2::zeros((s_p * s_a, 1));
                let mut weights = Vec::with_capacity(s_p * s_a);
                for (i, p) in problems.iter().enumerate() {
                    for (j, a) in algos.iter().enumerate() {
                        let mut r = Vec::new();
                        if self.kind == ModelKind::ModelA {
                            r.push((i, 1.0));
                            r.push((s_p + j, 1.0));
                        } else {
                            sparse_row(&p.features, 0, &mut r);
                            sparse_row(&a.predefined_features, b.f, &mut r);
                        }
                        rows.push(r);
                        let positive = perf.best_algo[i] == a.id;
                        targets[[i * s_a + j, 0]] = if positive { 1.0 } else { 0.0 };
                        weights.push(if positive { pos_weight } else { 1.0 });
                    }
                }
                Ok(Dataset {
                    inputs: Inputs::Sparse {
                        dim: self.net.input_dim(),
                        rows,
                    },
                    targets,
                    weights: Some(weights),
                })
            }
            ModelKind::ModelReg | ModelKind::ModelCla => {
                let rows = problems
                    .iter()
                    .map(|p| {
                        let mut r = Vec::new();
                        sparse_row(&p.features, 0, &mut r);
                        r
                    })
                    .collect();
                let mut targets = Array2::zeros((s_p, s_a));
                for i in 0..s_p {
                    if self.kind == ModelKind::ModelReg {
                        targets.row_mut(i).assign(&Array1::from(regression_targets(&perf.mean_best[i])));
                    } else {
                        let j = b.train_algos.iter().position(|a| *a == perf.best_algo[i]).expect("restricted");
                        targets[[i, j]] = 1.0;
                    }
                }
                Ok(Dataset {
                    inputs: Inputs::Sparse {
                        dim: self.net.input_dim(),
                        rows,
                    },
                    targets,
                    weights: None,
                })
            }
        }
    }

    /// ModelA freeze mask: PF rows, the off-diagonal zero block and the embedding bias.
    pub fn freeze(&self) -> Freeze {
        match self.kind {
            ModelKind::ModelA => {
                let b = &self.bindings;
                let cols = b.s_p() + b.s_a();
                Freeze {
                    blocks: vec![(0..b.f, 0..cols), (b.f..b.f + b.embed_dim, 0..b.s_p())],
                    bias0: true,
                }
            }
            _ => Freeze::none(),
        }
    }

    /// `PF` block of `W0` (ModelA only): column `j` is training problem `j`'s features.
    pub fn pf_block(&self) -> Option<Array2<f64>> {
        (self.kind == ModelKind::ModelA).then(|| {
            let b = &self.bindings;
            self.net.layers[0].w.slice(s![..b.f, ..b.s_p()]).to_owned()
        })
    }

    /// Adaptive embedding of a training algorithm (ModelA only).
    pub fn embedding(&self, algo: u32) -> Result<Array1<f64>> {
        let b = &self.bindings;
        let j = b.train_algos.iter().position(|a| *a == algo).ok_or(Error::NoEmbedding(algo))?;
        let l0 = &self.net.layers[0];
        Ok(&l0.w.slice(s![b.f.., b.s_p() + j]) + &l0.b.slice(s![b.f..]))
    }

    pub fn knows(&self, algo: u32) -> bool {
        match self.kind {
            ModelKind::ModelB => true,
            _ => self.bindings.train_algos.contains(&algo),
        }
    }

    /// Preference scores (higher is better), `problems x candidates`.
    ///
    /// ModelA, ModelReg and ModelCla can only score training algorithms.
    pub fn scores(&self, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec]) -> Result<Array2<f64>> {
        let b = &self.bindings;
        if let Some(p) = problems.iter().find(|p| p.features.len() != b.f) {
            return Err(Error::DimensionMismatch {
                expected: b.f,
                got: p.features.len(),
            });
        }
        let mut out = Array2::zeros((problems.len(), cands.len()));
        for (c, chunk) in problems.chunks(SCORE_CHUNK).enumerate() {
            let pf = Array2::from_shape_fn((chunk.len(), b.f), |(i, j)| chunk[i].features[j]);
            let block = match self.kind {
                ModelKind::ModelA => {
                    let emb = cands
                        .iter()
                        .map(|a| self.embedding(a.id))
                        .collect::<Result<Vec<_>>>()?;
                    let ae = Array2::from_shape_fn((cands.len(), b.embed_dim), |(i, j)| emb[i][j]);
                    let l0b = &self.net.layers[0].b;
                    let pf = &pf + &l0b.slice(s![..b.f]);
                    self.pair_scores(1, &pf, &ae)?
                }
                ModelKind::ModelB => {
                    let ag = Array2::from_shape_fn((cands.len(), b.g), |(i, j)| cands[i].predefined_features[j]);
                    self.pair_scores(0, &pf, &ag)?
                }
                ModelKind::ModelReg | ModelKind::ModelCla => {
                    let cols = cands
                        .iter()
                        .map(|a| b.train_algos.iter().position(|t| *t == a.id).ok_or(Error::NoEmbedding(a.id)))
                        .collect::<Result<Vec<_>>>()?;
                    let o = self.net.forward_batch(&pf)?;
                    let sel = o.select(Axis(1), &cols);
                    if self.kind == ModelKind::ModelReg {
                        -sel
                    } else {
                        sel
                    }
                }
            };
            out.slice_mut(s![c * SCORE_CHUNK..c * SCORE_CHUNK + chunk.len(), ..]).assign(&block);
        }
        Ok(out)
    }

    /// Score every (problem, algorithm) pair by splitting layer `start`'s input.
    fn pair_scores(&self, start: usize, prob: &Array2<f64>, algo: &Array2<f64>) -> Result<Array2<f64>> {
        let l = &self.net.layers[start];
        let dp = prob.ncols();
        if dp + algo.ncols() != l.cols() {
            return Err(Error::DimensionMismatch {
                expected: l.cols(),
                got: dp + algo.ncols(),
            });
        }
        let zp = prob.dot(&l.w.slice(s![.., ..dp]).t());
        let za = algo.dot(&l.w.slice(s![.., dp..]).t());
        let (np, na, h) = (prob.nrows(), algo.nrows(), l.rows());
        let mut hidden = Array2::zeros((np * na, h));
        for i in 0..np {
            for j in 0..na {
                let mut row = hidden.row_mut(i * na + j);
                ndarray::Zip::from(&mut row)
                    .and(zp.row(i))
                    .and(za.row(j))
                    .and(&l.b)
                    .for_each(|o, &p, &a, &bb| *o = l.activation.apply(p + a + bb));
            }
        }
        let out = if start + 1 < self.net.layers.len() {
            self.net.forward_batch_from(start + 1, &hidden)?
        } else {
            hidden
        };
        Ok(out.into_shape_with_order((np, na)).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    }

    pub fn to_record(&self) -> NetworkRecord {
        let mut meta = serde_json::Map::new();
        meta.insert("kind".into(), serde_json::to_value(self.kind).expect("serializable"));
        meta.insert("bindings".into(), serde_json::to_value(&self.bindings).expect("serializable"));
        self.net.to_record(meta)
    }

    pub fn from_record(rec: &NetworkRecord) -> Result<Self> {
        let field = |k: &str| rec.meta.get(k).cloned().ok_or_else(|| Error::Parse(format!("model.json: meta.{k} missing")));
        Ok(SelectorModel {
            kind: serde_json::from_value(field("kind")?)?,
            bindings: serde_json::from_value(field("bindings")?)?,
            net: Network::from_record(rec)?,
        })
    }
}

/// Train with the family's loss; ModelA keeps its PF block frozen.
pub fn fit(model: &mut SelectorModel, cat: &Catalog, perf: &PerformanceMatrix, hyper: &FitHyper) -> Result<TrainReport> {
    let data = model.training_set(cat, perf)?;
    let cfg = hyper.train_config(data.len());
    let freeze = model.freeze();
    neural::train(&mut model.net, &data, model.kind.loss(), &cfg, &freeze)
}

/// Argmax with ties to the lowest id.
pub fn argmax_by_id(scores: &[f64], ids: &[u32]) -> u32 {
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    argmin_by_id(&neg, ids)
}

/// Anything that picks one algorithm per problem.
pub trait Selector {
    fn kind(&self) -> Option<ModelKind> {
        None
    }

    /// Whether the selector can score `algo` at all.
    fn knows(&self, _algo: u32) -> bool {
        true
    }

    fn choose_batch(&self, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec]) -> Result<Vec<u32>>;

    /// `(pair score, +-1 label)` for margin accounting; only pair models have one.
    fn pair_scores(&self, _problems: &[&ProblemInstance], _cands: &[&AlgorithmSpec]) -> Option<Result<Array2<f64>>> {
        None
    }
}

impl Selector for SelectorModel {
    fn kind(&self) -> Option<ModelKind> {
        Some(self.kind)
    }

    fn knows(&self, algo: u32) -> bool {
        SelectorModel::knows(self, algo)
    }

    fn choose_batch(&self, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec]) -> Result<Vec<u32>> {
        if cands.is_empty() {
            return Err(Error::InvalidArgument("no candidate algorithms".into()));
        }
        let sc = self.scores(problems, cands)?;
        let ids: Vec<u32> = cands.iter().map(|a| a.id).collect();
        Ok(sc.rows().into_iter().map(|r| argmax_by_id(r.as_slice().expect("row-major"), &ids)).collect())
    }

    fn pair_scores(&self, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec]) -> Option<Result<Array2<f64>>> {
        self.kind.is_pair_model().then(|| self.scores(problems, cands))
    }
}

/// Pick one algorithm for one problem.
pub fn select(model: &SelectorModel, problem: &ProblemInstance, cands: &[&AlgorithmSpec]) -> Result<u32> {
    if model.kind == ModelKind::ModelA {
        if let Some(a) = cands.iter().find(|a| !model.knows(a.id)) {
            return Err(Error::NoEmbedding(a.id));
        }
    }
    let known: Vec<&AlgorithmSpec> = cands.iter().copied().filter(|a| model.knows(a.id)).collect();
    Ok(model.choose_batch(&[problem], &known)?[0])
}

/// Fraction of pairs with `y * s < gamma`.
pub fn margin_loss(margins: &[f64], gamma: f64) -> f64 {
    margins.iter().filter(|m| **m < gamma).count() as f64 / margins.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub error_s: f64,
    pub error_t: f64,
    pub gap: f64,
    pub margin_loss: Option<f64>,
    /// Test candidates the selector could not score were dropped.
    pub fallback: bool,
}

fn selection_error(sel: &dyn Selector, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec], labels: &[u32]) -> Result<f64> {
    let usable: Vec<&AlgorithmSpec> = cands.iter().copied().filter(|a| sel.knows(a.id)).collect();
    let chosen = sel.choose_batch(problems, &usable)?;
    let wrong = chosen.iter().zip(labels).filter(|(c, l)| c != l).count();
    Ok(wrong as f64 / problems.len() as f64)
}

/// Selection errors on S (training algorithms) and T (test algorithms),
/// labels being the best algorithm within each candidate set.
pub fn evaluate(sel: &dyn Selector, cat: &Catalog, split: &Split, perf: &PerformanceMatrix) -> Result<EvalReport> {
    let train_ps = cat.problems_of(&split.train_problems)?;
    let test_ps = cat.problems_of(&split.test_problems)?;
    let train_as = cat.algos_of(&split.train_algos)?;
    let test_as = cat.algos_of(&split.test_algos)?;
    let ls = perf.restrict_algos(&split.train_algos)?.restrict_problems(&split.train_problems)?;
    let lt = perf.restrict_algos(&split.test_algos)?.restrict_problems(&split.test_problems)?;
    let error_s = selection_error(sel, &train_ps, &train_as, &ls.best_algo)?;
    let error_t = selection_error(sel, &test_ps, &test_as, &lt.best_algo)?;
    let margin = match sel.pair_scores(&train_ps, &train_as) {
        Some(sc) => {
            let sc = sc?;
            let mut margins = Vec::with_capacity(sc.len());
            for (i, row) in sc.rows().into_iter().enumerate() {
                for (j, s) in row.iter().enumerate() {
                    let y = if train_as[j].id == ls.best_algo[i] { 1.0 } else { -1.0 };
                    margins.push(y * s);
                }
            }
            Some(margin_loss(&margins, DEFAULT_GAMMA_MARGIN))
        }
        None => None,
    };
    let fallback = test_as.iter().any(|a| !sel.knows(a.id));
    Ok(EvalReport {
        error_s,
        error_t,
        gap: error_t - error_s,
        margin_loss: margin,
        fallback,
    })
}

/// Uniformly random choice among candidates, seeded per problem id.
pub struct RandomSelector {
    pub seed: u64,
}

impl Selector for RandomSelector {
    fn choose_batch(&self, problems: &[&ProblemInstance], cands: &[&AlgorithmSpec]) -> Result<Vec<u32>> {
        use rand::Rng as _;
        if cands.is_empty() {
            return Err(Error::InvalidArgument("no candidate algorithms".into()));
        }
        Ok(problems
            .iter()
            .map(|p| cands[crate::seed::derived_rng(self.seed, &[p.id]).gen_range(0..cands.len())].id)
            .collect())
    }
}

/// Squared feature norms `||x_j||^2` of the training instances a model sees:
/// pairs `[f_p; g_a]` for ModelB, `f_p` otherwise. Returns `(sum, max)`.
pub fn instance_sq_norms(model: &SelectorModel, cat: &Catalog) -> Result<(f64, f64)> {
    let b = &model.bindings;
    let ps = cat.problems_of(&b.train_problems)?;
    let pn: Vec<f64> = ps.iter().map(|p| p.feature_sq_norm()).collect();
    let an: Vec<f64> = cat
        .algos_of(&b.train_algos)?
        .iter()
        .map(|a| a.predefined_features.iter().map(|v| v * v).sum())
        .collect();
    let (mut sum, mut max) = (0.0, 0.0f64);
    match model.kind {
        ModelKind::ModelB => {
            for p in &pn {
                for a in &an {
                    sum += p + a;
                    max = max.max(p + a);
                }
            }
        }
        ModelKind::ModelA => {
            for p in &pn {
                sum += p * an.len() as f64;
                max = max.max(*p);
            }
        }
        _ => {
            for p in &pn {
                sum += p;
                max = max.max(*p);
            }
        }
    }
    Ok((sum, max))
}

/// `sup (||PF_i||_2 + ||AF_i||_2)` over training pairs (ModelA).
pub fn sup_pf_af(model: &SelectorModel) -> Result<f64> {
    let pf = model
        .pf_block()
        .ok_or_else(|| Error::InvalidArgument("sup(PF+AF) applies to ModelA only".into()))?;
    let max_pf = pf.columns().into_iter().map(|c| c.dot(&c).sqrt()).fold(0.0, f64::max);
    let max_af = model
        .bindings
        .train_algos
        .iter()
        .map(|a| model.embedding(*a).map(|e| e.dot(&e).sqrt()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(max_pf + max_af)
}

/// Distinct-id check used before training.
pub fn unique_ids<T: Eq + std::hash::Hash + Copy>(ids: &[T]) -> bool {
    let set: HashSet<T> = ids.iter().copied().collect();
    set.len() == ids.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::make_portfolio;
    use crate::problem::{generate_problems, OperatorTable, ProblemSpec};

    fn fixture(n: usize, s_a: usize) -> (Vec<ProblemInstance>, Vec<AlgorithmSpec>, PerformanceMatrix) {
        let ps = generate_problems(&ProblemSpec::new(OperatorTable::default(), 2, 4), n, 0, 5, 1).unwrap();
        let algos = make_portfolio(s_a, 2).unwrap();
        let means = ps
            .iter()
            .map(|p| algos.iter().map(|a| ((p.id * 7 + a.id as u64 * 3) % 5) as f64).collect())
            .collect();
        let m = PerformanceMatrix::from_means(ps.iter().map(|p| p.id).collect(), algos.iter().map(|a| a.id).collect(), means, 1).unwrap();
        (ps, algos, m)
    }

    #[test]
    fn widths() {
        assert_eq!(hidden_widths(1.0).unwrap(), vec![128, 128, 128]);
        assert_eq!(hidden_widths(0.5).unwrap(), vec![64, 64, 64]);
        assert!(hidden_widths(0.2).is_err());
        assert!(hidden_widths(2.5).is_err());
    }

    #[test]
    fn model_a_layout_and_freeze() {
        let (ps, algos, m) = fixture(100, 5);
        let cat = Catalog::new(&ps, &algos);
        let ids: Vec<u64> = ps.iter().map(|p| p.id).collect();
        let aids: Vec<u32> = algos.iter().map(|a| a.id).collect();
        let mut model = build(ModelKind::ModelA, &cat, &ids, &aids, 0.25, 1).unwrap();
        assert_eq!(model.net.input_dim(), 105);
        let before = model.net.layers[0].clone();
        let hyper = FitHyper {
            epochs: 10,
            batch_size: Some(64),
            ..FitHyper::default()
        };
        fit(&mut model, &cat, &m, &hyper).unwrap();
        let pf = model.pf_block().unwrap();
        for (j, p) in ps.iter().enumerate() {
            assert_eq!(pf.column(j).to_vec(), p.features);
        }
        let f = model.bindings.f;
        assert_eq!(model.net.layers[0].w.slice(s![f.., ..100]), before.w.slice(s![f.., ..100]));
        assert_eq!(model.net.layers[0].b, before.b);
        assert_ne!(model.net.layers[0].w.slice(s![f.., 100..]), before.w.slice(s![f.., 100..]));
        let unseen = make_portfolio(6, 2).unwrap();
        assert!(matches!(select(&model, &ps[0], &[&unseen[5]]), Err(Error::NoEmbedding(5))));
    }

    #[test]
    fn single_algorithm_is_always_chosen() {
        let (ps, algos, m) = fixture(30, 1);
        let cat = Catalog::new(&ps, &algos);
        let ids: Vec<u64> = ps.iter().map(|p| p.id).collect();
        let split = Split::new(ids[..24].to_vec(), ids[24..].to_vec(), vec![0], vec![0]);
        for kind in ModelKind::ALL {
            let mut model = build(kind, &cat, &split.train_problems, &[0], 0.25, 3).unwrap();
            fit(&mut model, &cat, &m, &FitHyper { epochs: 2, ..FitHyper::default() }).unwrap();
            let r = evaluate(&model, &cat, &split, &m).unwrap();
            assert_eq!((r.error_s, r.error_t, r.gap), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn regression_argmin_and_ties() {
        assert_eq!(argmax_by_id(&[-0.2, -0.1, -0.9], &[0, 1, 2]), 1);
        assert_eq!(argmax_by_id(&[0.5, 0.5, 0.5], &[4, 2, 9]), 2);
        assert!((margin_loss(&[0.5, 0.05, -0.2], 0.1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn record_round_trip() {
        let (ps, algos, _) = fixture(20, 3);
        let cat = Catalog::new(&ps, &algos);
        let ids: Vec<u64> = ps.iter().map(|p| p.id).collect();
        let model = build(ModelKind::ModelB, &cat, &ids, &[0, 1, 2], 0.25, 3).unwrap();
        let text = serde_json::to_string(&model.to_record()).unwrap();
        let back = SelectorModel::from_record(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn regression_targets_are_clipped_z_scores() {
        let t = regression_targets(&[1.0, 1.0, 1.0]);
        assert_eq!(t, vec![0.0; 3]);
        let t = regression_targets(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1e6]);
        assert!(t.iter().all(|v| v.abs() <= TARGET_CLIP));
        assert_eq!(t[10], TARGET_CLIP);
    }
}
