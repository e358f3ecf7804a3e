//! Performance matrix and best-algorithm labels.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::{run, AlgorithmSpec};
use crate::problem::ProblemInstance;
use crate::seed;

/// Default number of repeated runs per (problem, algorithm) cell.
pub const DEFAULT_N_RUNS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub problem_ids: Vec<u64>,
    pub algo_ids: Vec<u32>,
    /// Row-major `|P| x |A|`.
    pub mean_best: Vec<Vec<f64>>,
    pub n_runs: usize,
    pub best_algo: Vec<u32>,
}

/// Argmin over `values`, ties to the lowest id.
pub fn argmin_by_id(values: &[f64], ids: &[u32]) -> u32 {
    let mut best = 0;
    for j in 1..values.len() {
        let (v, b) = (values[j], values[best]);
        if v < b || (v == b && ids[j] < ids[best]) {
            best = j;
        }
    }
    ids[best]
}

impl PerformanceMatrix {
    /// Assemble from a filled matrix, deriving labels.
    pub fn from_means(problem_ids: Vec<u64>, algo_ids: Vec<u32>, mean_best: Vec<Vec<f64>>, n_runs: usize) -> Result<Self> {
        if problem_ids.is_empty() || algo_ids.is_empty() {
            return Err(Error::InvalidArgument("performance matrix needs problems and algorithms".into()));
        }
        if n_runs == 0 {
            return Err(Error::InvalidArgument("n_runs must be >= 1".into()));
        }
        if mean_best.len() != problem_ids.len() || mean_best.iter().any(|r| r.len() != algo_ids.len()) {
            return Err(Error::DimensionMismatch {
                expected: problem_ids.len() * algo_ids.len(),
                got: mean_best.iter().map(Vec::len).sum(),
            });
        }
        if mean_best.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("performance entries must be finite".into()));
        }
        let best_algo = mean_best.iter().map(|r| argmin_by_id(r, &algo_ids)).collect();
        Ok(PerformanceMatrix {
            problem_ids,
            algo_ids,
            mean_best,
            n_runs,
            best_algo,
        })
    }

    pub fn row_of(&self, problem_id: u64) -> Option<usize> {
        self.problem_ids.iter().position(|p| *p == problem_id)
    }

    pub fn col_of(&self, algo_id: u32) -> Option<usize> {
        self.algo_ids.iter().position(|a| *a == algo_id)
    }

    /// Keep only `algo_ids` (in the given order) and relabel.
    pub fn restrict_algos(&self, algo_ids: &[u32]) -> Result<Self> {
        let cols = algo_ids
            .iter()
            .map(|a| self.col_of(*a).ok_or_else(|| Error::InvalidArgument(format!("algorithm {a} not in matrix"))))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.mean_best.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
        PerformanceMatrix::from_means(self.problem_ids.clone(), algo_ids.to_vec(), rows, self.n_runs)
    }

    /// Keep only `problem_ids` (in the given order).
    pub fn restrict_problems(&self, problem_ids: &[u64]) -> Result<Self> {
        let index: HashMap<u64, usize> = self.problem_ids.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let rows = problem_ids
            .iter()
            .map(|p| {
                index
                    .get(p)
                    .map(|&i| self.mean_best[i].clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("problem {p} not in matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        PerformanceMatrix::from_means(problem_ids.to_vec(), self.algo_ids.clone(), rows, self.n_runs)
    }

    pub fn write_perf_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["problem_id", "algo_id", "mean_best", "n_runs"])?;
        for (i, p) in self.problem_ids.iter().enumerate() {
            for (j, a) in self.algo_ids.iter().enumerate() {
                w.write_record([p.to_string(), a.to_string(), self.mean_best[i][j].to_string(), self.n_runs.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<perf.csv>", e))
    }

    pub fn write_labels_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["problem_id", "best_algo"])?;
        for (p, b) in self.problem_ids.iter().zip(&self.best_algo) {
            w.write_record([p.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<labels.csv>", e))
    }

    /// Parse `perf.csv`; row and column order follow first appearance.
    pub fn read_perf_csv(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut problem_ids = Vec::new();
        let mut algo_ids = Vec::new();
        let mut cells: HashMap<(u64, u32), f64> = HashMap::new();
        let mut n_runs = None;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse("perf.csv: short record".into()));
            let bad = |what: &str| Error::Parse(format!("perf.csv: bad {what}"));
            let p: u64 = field(0)?.parse().map_err(|_| bad("problem_id"))?;
            let a: u32 = field(1)?.parse().map_err(|_| bad("algo_id"))?;
            let v: f64 = field(2)?.parse().map_err(|_| bad("mean_best"))?;
            let n: usize = field(3)?.parse().map_err(|_| bad("n_runs"))?;
            if *n_runs.get_or_insert(n) != n {
                return Err(Error::Parse("perf.csv: inconsistent n_runs".into()));
            }
            if !problem_ids.contains(&p) {
                problem_ids.push(p);
            }
            if !algo_ids.contains(&a) {
                algo_ids.push(a);
            }
            cells.insert((p, a), v);
        }
        let rows = problem_ids
            .iter()
            .map(|p| {
                algo_ids
                    .iter()
                    .map(|a| cells.get(&(*p, *a)).copied().ok_or_else(|| Error::Parse(format!("perf.csv: missing cell ({p}, {a})"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PerformanceMatrix::from_means(problem_ids, algo_ids, rows, n_runs.unwrap_or(0))
    }
}

/// Run every algorithm `n_runs` times on every problem and average the best values.
pub fn label(
    problems: &[ProblemInstance],
    portfolio: &[AlgorithmSpec],
    n_runs: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<PerformanceMatrix> {
    if problems.is_empty() || portfolio.is_empty() {
        return Err(Error::InvalidArgument("labeling needs problems and algorithms".into()));
    }
    if n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be >= 1".into()));
    }
    for a in portfolio {
        a.validate()?;
    }
    let na = portfolio.len();
    let cells: Vec<f64> = seed::with_jobs(jobs, || {
        (0..problems.len() * na)
            .into_par_iter()
            .map(|c| {
                let (p, a) = (&problems[c / na], &portfolio[c % na]);
                let inv = 1.0 / n_runs as f64;
                (0..n_runs as u64)
                    .map(|r| {
                        let s = seed::derive_seed(master_seed, &[p.id, a.id as u64, r]);
                        run(a, p, s).best_value * inv
                    })
                    .sum()
            })
            .collect()
    });
    let rows = cells.chunks(na).map(<[f64]>::to_vec).collect();
    PerformanceMatrix::from_means(
        problems.iter().map(|p| p.id).collect(),
        portfolio.iter().map(|a| a.id).collect(),
        rows,
        n_runs,
    )
}

/// Problem-level train/test partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_problems: Vec<u64>,
    pub test_problems: Vec<u64>,
    pub train_algos: Vec<u32>,
    pub test_algos: Vec<u32>,
    /// `|T_P| / |S_P|`.
    pub eta: f64,
    /// `|S| = |S_P| * |S_A|`.
    pub s_pairs: usize,
    /// `|T| = |T_P| * |T_A|`.
    pub t_pairs: usize,
}

impl Split {
    pub fn new(train_problems: Vec<u64>, test_problems: Vec<u64>, train_algos: Vec<u32>, test_algos: Vec<u32>) -> Self {
        let eta = test_problems.len() as f64 / train_problems.len() as f64;
        Split {
            s_pairs: train_problems.len() * train_algos.len(),
            t_pairs: test_problems.len() * test_algos.len(),
            train_problems,
            test_problems,
            train_algos,
            test_algos,
            eta,
        }
    }
}

/// Seeded shuffle, then the first `round(test_fraction * n)` problems become T.
///
/// Both sides share the matrix's algorithm set.
pub fn split(matrix: &PerformanceMatrix, problems: &[ProblemInstance], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 0.5) so that eta < 1, got {test_fraction}"
        )));
    }
    let mut ids: Vec<u64> = problems.iter().map(|p| p.id).collect();
    if ids.iter().any(|id| matrix.row_of(*id).is_none()) {
        return Err(Error::InvalidArgument("split: problem missing from performance matrix".into()));
    }
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    if n_test == 0 || n_test >= ids.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {} problems at fraction {test_fraction} leaves an empty side",
            ids.len()
        )));
    }
    ids.shuffle(&mut seed::rng(seed));
    let test = ids[..n_test].to_vec();
    let train = ids[n_test..].to_vec();
    Ok(Split::new(train, test, matrix.algo_ids.clone(), matrix.algo_ids.clone()))
}
