//! Generative distributions over problems and algorithm sets, and the
//! chi-square divergence between train and test generators.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{generate_tree, tree_logprob, OperatorTable};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    pub operator_table: OperatorTable,
    /// `(algorithm id, selection weight)` over the algorithm universe.
    pub algo_weights: Vec<(u32, f64)>,
    pub dim: usize,
    pub max_depth: usize,
}

impl GenerativeConfig {
    /// Uniform weights over `algos`.
    pub fn uniform(operator_table: OperatorTable, algos: &[u32], dim: usize, max_depth: usize) -> Self {
        GenerativeConfig {
            operator_table,
            algo_weights: algos.iter().map(|a| (*a, 1.0)).collect(),
            dim,
            max_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.operator_table.validate()?;
        if self.algo_weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("algorithm weights must be finite and >= 0".into()));
        }
        if !self.algo_weights.iter().any(|(_, w)| *w > 0.0) {
            return Err(Error::InvalidDistribution("at least one algorithm weight must be positive".into()));
        }
        Ok(())
    }
}

/// `sum_i p_i^2 / q_i - 1` after normalizing; `eps` is added to every entry of `q`.
/// Infinite when some `p_i > 0` meets `q_i = 0`.
pub fn chi2_categorical(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if !(eps >= 0.0) || p.iter().chain(q).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidDistribution("weights and eps must be finite and non-negative".into()));
    }
    let ptot: f64 = p.iter().sum();
    let qtot: f64 = q.iter().map(|v| v + eps).sum();
    if ptot <= 0.0 || qtot <= 0.0 {
        return Err(Error::InvalidDistribution("weights do not normalize".into()));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        let qi = qi + eps;
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        acc += pi * pi * qtot / qi;
    }
    Ok((acc / (ptot * ptot) - 1.0).max(0.0))
}

/// Chi-square between two algorithm-weight maps over the union of their ids.
pub fn chi2_algo(test: &GenerativeConfig, train: &GenerativeConfig, eps: f64) -> Result<f64> {
    let mut ids: Vec<u32> = test.algo_weights.iter().chain(&train.algo_weights).map(|(a, _)| *a).collect();
    ids.sort_unstable();
    ids.dedup();
    let weight = |cfg: &GenerativeConfig, id: u32| cfg.algo_weights.iter().filter(|(a, _)| *a == id).map(|(_, w)| w).sum::<f64>();
    let p: Vec<f64> = ids.iter().map(|&i| weight(test, i)).collect();
    let q: Vec<f64> = ids.iter().map(|&i| weight(train, i)).collect();
    chi2_categorical(&p, &q, eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    #[serde(with = "finite_or_str")]
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub support_violation: bool,
}

/// `true` when `test` can emit a decision that `train` cannot.
fn support_exceeds(test: &GenerativeConfig, train: &GenerativeConfig) -> bool {
    let (tt, st) = (&test.operator_table, &train.operator_table);
    let op_missing = tt
        .entries
        .iter()
        .filter(|e| e.weight > 0.0)
        .any(|e| st.weight_of(e.op).is_none_or(|w| w <= 0.0));
    let leaf_missing = (tt.leaf_var_weight > 0.0 && st.leaf_var_weight <= 0.0)
        || (tt.leaf_const_weight > 0.0 && st.leaf_const_weight <= 0.0);
    op_missing || leaf_missing || test.dim > train.dim || test.max_depth > train.max_depth
}

/// Monte-Carlo `E_{x ~ P_S}[(P_T(x)/P_S(x))^2] - 1` with exact tree likelihood ratios.
///
/// Constants are uniform on `[-1, 1]` under both generators and cancel.
pub fn chi2_problem_mc(test: &GenerativeConfig, train: &GenerativeConfig, n: usize, seed: u64, jobs: usize) -> Result<McEstimate> {
    test.operator_table.validate()?;
    train.operator_table.validate()?;
    if n < 100 {
        return Err(Error::InvalidArgument(format!("Monte-Carlo estimate needs n >= 100, got {n}")));
    }
    if support_exceeds(test, train) {
        return Ok(McEstimate {
            estimate: f64::INFINITY,
            stderr: 0.0,
            n,
            support_violation: true,
        });
    }
    let ratios: Vec<f64> = seed::with_jobs(jobs, || {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let (tree, ls) = generate_tree(&train.operator_table, train.dim, train.max_depth, seed::derive_seed(seed, &[i]))?;
                let lt = tree_logprob(&tree, &test.operator_table, test.dim, test.max_depth);
                Ok(if lt.in_support { (2.0 * (lt.logprob - ls)).exp() } else { 0.0 })
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let nf = n as f64;
    let mean = ratios.iter().sum::<f64>() / nf;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(McEstimate {
        estimate: mean - 1.0,
        stderr: (var / nf).sqrt(),
        n,
        support_violation: false,
    })
}

/// Scale the weights of a seeded random `ceil(fraction * count)` subset of operators.
pub fn apply_problem_shift(table: &OperatorTable, fraction: f64, scale: f64, seed: u64) -> Result<OperatorTable> {
    if !(0.0..=1.0).contains(&fraction) || !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "problem shift needs fraction in [0, 1] and positive scale, got ({fraction}, {scale})"
        )));
    }
    let count = table.entries.len();
    let k = ((fraction * count as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut out = table.clone();
    for &i in &idx[..k.min(count)] {
        out.entries[i].weight *= scale;
    }
    Ok(out)
}

/// `train_ids` plus the first `n_new` universe ids not already in it.
pub fn apply_algo_shift(train_ids: &[u32], n_new: usize, universe: &[u32]) -> Result<Vec<u32>> {
    let fresh: Vec<u32> = universe.iter().copied().filter(|u| !train_ids.contains(u)).take(n_new).collect();
    if fresh.len() < n_new {
        return Err(Error::InvalidArgument(format!(
            "algorithm universe exhausted: requested {n_new} new algorithms, {} available",
            fresh.len()
        )));
    }
    Ok(train_ids.iter().copied().chain(fresh).collect())
}

/// `(1 + chi2_p)(1 + chi2_a) - 1`: joint divergence of independent generators.
pub fn combine_chi2(chi2_problem: f64, chi2_algo: f64) -> f64 {
    (1.0 + chi2_problem) * (1.0 + chi2_algo) - 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    #[serde(with = "finite_or_str")]
    pub chi2_algo: f64,
    pub chi2_problem_mc: McEstimate,
    pub n_mc: usize,
    pub smoothing_eps: f64,
    #[serde(with = "finite_or_str")]
    pub chi2_joint: f64,
}

pub fn divergence(test: &GenerativeConfig, train: &GenerativeConfig, eps: f64, n_mc: usize, seed: u64, jobs: usize) -> Result<DivergenceReport> {
    test.validate()?;
    train.validate()?;
    let a = chi2_algo(test, train, eps)?;
    let p = chi2_problem_mc(test, train, n_mc, seed, jobs)?;
    // A negative MC estimate is sampling noise; the joint value clamps it at 0.
    let joint = combine_chi2(p.estimate.max(0.0), a);
    Ok(DivergenceReport {
        chi2_algo: a,
        chi2_problem_mc: p,
        n_mc,
        smoothing_eps: eps,
        chi2_joint: joint,
    })
}

/// `shift.json` body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftFile {
    pub train: GenerativeConfig,
    pub test: GenerativeConfig,
    pub report: DivergenceReport,
}

/// Serialize non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod finite_or_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}
