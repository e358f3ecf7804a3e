//! Subcommand bodies. Each one reads a JSON config, reads and writes only the
//! documented artifact formats, and appends a manifest line next to every
//! file it writes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use algsel::artifacts::{self, RunManifest};
use algsel::bounds::{self, BoundInputs, BoundKind, BoundReport, Cor2Which};
use algsel::distshift::{self, GenerativeConfig, ShiftFile};
use algsel::experiments::{self, ExperimentConfig, ResultRow, Scenario};
use algsel::labeling::{self, PerformanceMatrix, Split};
use algsel::neural::{NetworkRecord, NormReport};
use algsel::plot::{self, Metric};
use algsel::portfolio::{self, AlgorithmSpec, Family};
use algsel::problem::{self, OperatorTable, ProblemInstance, ProblemSpec, DEFAULT_L_MAX};
use algsel::seed::derive_seed;
use algsel::selectors::{self, Catalog, EvalReport, FitHyper, ModelKind, SelectorModel};

use crate::Common;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<algsel::Error> for CliError {
    fn from(e: algsel::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type R<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Parsed config plus everything the manifest records.
struct Run<'a> {
    command: &'static str,
    common: &'a Common,
    raw: Value,
    dir: PathBuf,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: f64,
}

impl<'a> Run<'a> {
    fn start<T: DeserializeOwned>(command: &'static str, common: &'a Common) -> R<(Self, T)> {
        let started = artifacts::unix_now();
        let (raw, dir) = match &common.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("config {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (v, dir)
            }
            None => (Value::Object(Default::default()), PathBuf::new()),
        };
        let cfg: T = serde_json::from_value(raw.clone()).map_err(|e| invalid(format!("{command} config: {e}")))?;
        let mut inputs = Vec::new();
        if let Some(p) = &common.config {
            inputs.push(p.clone());
        }
        let run = Run {
            command,
            common,
            raw,
            dir,
            seed: common.seed.unwrap_or(0),
            inputs,
            outputs: Vec::new(),
            started,
        };
        Ok((run, cfg))
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn read(&mut self, p: &Path) -> R<String> {
        let p = self.path(p);
        let text = artifacts::read_file(&p)?;
        self.inputs.push(p);
        Ok(text)
    }

    fn read_json<T: DeserializeOwned>(&mut self, p: &Path) -> R<T> {
        let text = self.read(p)?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> R<PathBuf> {
        let p = self.out_path(name);
        artifacts::write_file(&p, bytes)?;
        self.outputs.push(p.clone());
        Ok(p)
    }

    /// Record a file written by someone else (e.g. appended by the experiment runner).
    fn wrote(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }

    fn finish(self, master_seed: u64) -> R<()> {
        let mut m = RunManifest::new(self.command, master_seed, self.raw);
        m.started_unix_s = self.started;
        m.inputs = self.inputs;
        m.outputs = self.outputs.clone();
        m.finished_unix_s = artifacts::unix_now();
        for o in &self.outputs {
            artifacts::append_manifest(o, &m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Vocab {
    table: OperatorTable,
    l_max: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            table: OperatorTable::default(),
            l_max: DEFAULT_L_MAX,
        }
    }
}

fn load_problems(run: &mut Run, path: &Path, vocab: &Vocab) -> R<Vec<ProblemInstance>> {
    let text = run.read(path)?;
    Ok(problem::read_problems_jsonl(&text, &vocab.table, vocab.l_max)?)
}

fn load_perf(run: &mut Run, path: &Path) -> R<PerformanceMatrix> {
    let text = run.read(path)?;
    Ok(PerformanceMatrix::read_perf_csv(text.as_bytes())?)
}

fn load_model(run: &mut Run, path: &Path) -> R<SelectorModel> {
    let rec: NetworkRecord = run.read_json(path)?;
    Ok(SelectorModel::from_record(&rec)?)
}

/// Problems, portfolio, performance matrix and split shared by train / eval / bounds.
#[derive(Clone, Debug, Deserialize)]
struct DataPaths {
    problems: PathBuf,
    portfolio: PathBuf,
    perf: PathBuf,
    split: PathBuf,
    #[serde(default)]
    vocab: Vocab,
}

struct Data {
    problems: Vec<ProblemInstance>,
    algos: Vec<AlgorithmSpec>,
    perf: PerformanceMatrix,
    split: Split,
}

impl Data {
    fn load(run: &mut Run, d: &DataPaths) -> R<Self> {
        Ok(Data {
            problems: load_problems(run, &d.problems, &d.vocab)?,
            algos: run.read_json(&d.portfolio)?,
            perf: load_perf(run, &d.perf)?,
            split: run.read_json(&d.split)?,
        })
    }

    fn catalog(&self) -> Catalog<'_> {
        Catalog::new(&self.problems, &self.algos)
    }
}

fn json<T: Serialize>(v: &T) -> R<Vec<u8>> {
    Ok(artifacts::to_json_bytes(v)?)
}

// ---- gen ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    problem: ProblemSpec,
    count: usize,
    #[serde(default)]
    first_id: u64,
}

pub fn gen(c: &Common) -> R<()> {
    let (mut run, cfg): (_, GenConfig) = Run::start("gen", c)?;
    if cfg.count == 0 {
        return Err(invalid("gen: count must be >= 1"));
    }
    let ps = problem::generate_problems(&cfg.problem, cfg.count, cfg.first_id, run.seed, c.jobs)?;
    let mut buf = Vec::new();
    problem::write_problems_jsonl(&ps, &mut buf)?;
    run.write("problems.jsonl", &buf)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- label ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PortfolioGen {
    size: usize,
    #[serde(default = "all_families")]
    families: Vec<Family>,
    /// Overrides every algorithm's own population size.
    population_size: Option<usize>,
    iterations: Option<usize>,
}

fn all_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

fn default_n_runs() -> usize {
    labeling::DEFAULT_N_RUNS
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelConfig {
    problems: PathBuf,
    #[serde(default)]
    vocab: Vocab,
    portfolio: PortfolioGen,
    #[serde(default = "default_n_runs")]
    n_runs: usize,
}

pub fn label(c: &Common) -> R<()> {
    let (mut run, cfg): (_, LabelConfig) = Run::start("label", c)?;
    let ps = load_problems(&mut run, &cfg.problems, &cfg.vocab)?;
    let pg = &cfg.portfolio;
    let algos: Vec<AlgorithmSpec> = portfolio::make_portfolio_from(pg.size, derive_seed(run.seed, &[1]), &pg.families)?
        .iter()
        .map(|a| {
            a.with_budget(
                pg.population_size.unwrap_or(a.hyperparams.population_size),
                pg.iterations.unwrap_or(a.hyperparams.iterations),
            )
        })
        .collect();
    let perf = labeling::label(&ps, &algos, cfg.n_runs, derive_seed(run.seed, &[2]), c.jobs)?;
    run.write("portfolio.json", &json(&algos)?)?;
    let mut buf = Vec::new();
    perf.write_perf_csv(&mut buf)?;
    run.write("perf.csv", &buf)?;
    let mut buf = Vec::new();
    perf.write_labels_csv(&mut buf)?;
    run.write("labels.csv", &buf)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- split ----

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitConfig {
    problems: PathBuf,
    perf: PathBuf,
    #[serde(default)]
    vocab: Vocab,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
}

pub fn split(c: &Common) -> R<()> {
    let (mut run, cfg): (_, SplitConfig) = Run::start("split", c)?;
    let ps = load_problems(&mut run, &cfg.problems, &cfg.vocab)?;
    let perf = load_perf(&mut run, &cfg.perf)?;
    let s = labeling::split(&perf, &ps, cfg.test_fraction, run.seed)?;
    run.write("split.json", &json(&s)?)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- train ----

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct TrainConfig {
    #[serde(flatten)]
    data: DataPaths,
    model: ModelKind,
    #[serde(default = "one")]
    width_multiplier: f64,
    #[serde(default)]
    fit: FitHyper,
}

pub fn train(c: &Common) -> R<()> {
    let (mut run, cfg): (_, TrainConfig) = Run::start("train", c)?;
    let data = Data::load(&mut run, &cfg.data)?;
    let cat = data.catalog();
    let s = &data.split;
    if !selectors::unique_ids(&s.train_problems) || !selectors::unique_ids(&s.train_algos) {
        return Err(invalid("train: split contains duplicate ids"));
    }
    let mut model = selectors::build(
        cfg.model,
        &cat,
        &s.train_problems,
        &s.train_algos,
        cfg.width_multiplier,
        derive_seed(run.seed, &[1]),
    )?;
    let mut hyper = cfg.fit.clone();
    hyper.seed = derive_seed(run.seed, &[2, hyper.seed]);
    let report = selectors::fit(&mut model, &cat, &data.perf, &hyper)?;
    eprintln!("{}: final loss {:.6}", cfg.model, report.final_loss);
    run.write("model.json", &json(&model.to_record())?)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- eval ----

#[derive(Deserialize)]
struct EvalConfig {
    #[serde(flatten)]
    data: DataPaths,
    model: PathBuf,
}

#[derive(Serialize)]
struct EvalFile {
    kind: ModelKind,
    #[serde(flatten)]
    report: EvalReport,
}

pub fn eval(c: &Common) -> R<()> {
    let (mut run, cfg): (_, EvalConfig) = Run::start("eval", c)?;
    let data = Data::load(&mut run, &cfg.data)?;
    let model = load_model(&mut run, &cfg.model)?;
    let report = selectors::evaluate(&model, &data.catalog(), &data.split, &data.perf)?;
    run.write("eval.json", &json(&EvalFile { kind: model.kind, report })?)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- bounds ----

fn default_delta() -> f64 {
    selectors::DEFAULT_DELTA
}

fn default_margin() -> f64 {
    selectors::DEFAULT_GAMMA_MARGIN
}

fn default_p() -> f64 {
    0.5
}

/// Bound inputs written out by hand; norms are given per layer.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitInputs {
    s_p: usize,
    s_a: usize,
    t_p: usize,
    t_a: usize,
    /// Defaults to `t_p / s_p`.
    eta: Option<f64>,
    #[serde(default = "default_delta")]
    delta: f64,
    gamma_loss: f64,
    #[serde(default = "default_margin")]
    gamma_margin: f64,
    spectral: Vec<f64>,
    frobenius: Vec<f64>,
    /// Layer 0 is the embedding layer W0 (excluded from the Lipschitz product).
    #[serde(default)]
    w0_first_layer: bool,
    #[serde(default)]
    sum_sq_norms: f64,
    #[serde(default)]
    max_sq_norm: f64,
    #[serde(default)]
    sup_pf_af: f64,
    #[serde(default, with = "distshift::finite_or_str")]
    chi2: f64,
    #[serde(default = "default_p")]
    p_transductive: f64,
}

impl ExplicitInputs {
    fn into_inputs(self) -> R<BoundInputs> {
        if self.spectral.is_empty() || self.spectral.len() != self.frobenius.len() {
            return Err(invalid("bounds: spectral and frobenius must list the same non-zero number of layers"));
        }
        let skip = usize::from(self.w0_first_layer);
        let norm = NormReport {
            lipschitz_upper: self.spectral[skip..].iter().product(),
            frob_product: self.frobenius.iter().product(),
            w0_spectral: self.w0_first_layer.then(|| self.spectral[0]),
            converged: true,
            spectral: self.spectral,
            frobenius: self.frobenius,
        };
        let mut inp = BoundInputs::new(self.s_p, self.s_a, self.t_p, self.t_a, self.gamma_loss, norm);
        if let Some(eta) = self.eta {
            inp.eta = eta;
        }
        inp.delta = self.delta;
        inp.gamma_margin = self.gamma_margin;
        inp.sum_sq_norms = self.sum_sq_norms;
        inp.max_sq_norm = self.max_sq_norm;
        inp.sup_pf_af = self.sup_pf_af;
        inp.chi2 = self.chi2;
        inp.p_transductive = self.p_transductive;
        Ok(inp)
    }
}

#[derive(Deserialize)]
struct BoundsConfig {
    /// Requested bounds; an inapplicable requested bound is an error.
    bounds: Option<Vec<BoundKind>>,
    error_s: Option<f64>,
    inputs: Option<ExplicitInputs>,
    model: Option<PathBuf>,
    #[serde(flatten)]
    data: Option<DataPaths>,
    #[serde(default, with = "opt_chi2")]
    chi2: Option<f64>,
}

mod opt_chi2 {
    use serde::{Deserialize, Deserializer};

    #[derive(Deserialize)]
    struct W(#[serde(with = "algsel::distshift::finite_or_str")] f64);

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

fn compute_bound(kind: BoundKind, inp: &BoundInputs, error_s: f64) -> algsel::Result<BoundReport> {
    match kind {
        BoundKind::Thm1 => bounds::thm1_transductive_complexity(inp),
        BoundKind::Cor1 => bounds::cor1_transductive_complexity(inp),
        BoundKind::Thm2 => bounds::thm2_transductive_bound(inp, error_s),
        BoundKind::Cor2Reg => bounds::cor2_bounds(inp, error_s, Cor2Which::Reg),
        BoundKind::Cor2Cla => bounds::cor2_bounds(inp, error_s, Cor2Which::Cla),
        BoundKind::Thm3 => bounds::thm3_inductive_complexity(inp),
        BoundKind::Thm4 => bounds::thm4_inductive_bound(inp, error_s),
        BoundKind::Cor5 => bounds::cor5_shifted_bound(inp, error_s),
    }
}

fn kind_name(kind: BoundKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{kind:?}"))
}

fn bounds_for_model(kind: ModelKind, shifted: bool) -> Vec<BoundKind> {
    match kind {
        ModelKind::ModelA => vec![BoundKind::Thm1, BoundKind::Cor1, BoundKind::Thm2],
        ModelKind::ModelB if shifted => vec![BoundKind::Thm3, BoundKind::Cor5],
        ModelKind::ModelB => vec![BoundKind::Thm3, BoundKind::Thm4],
        ModelKind::ModelReg => vec![BoundKind::Cor2Reg],
        ModelKind::ModelCla => vec![BoundKind::Cor2Cla],
    }
}

const ALL_BOUNDS: [BoundKind; 8] = [
    BoundKind::Thm1,
    BoundKind::Cor1,
    BoundKind::Thm2,
    BoundKind::Cor2Reg,
    BoundKind::Cor2Cla,
    BoundKind::Thm3,
    BoundKind::Thm4,
    BoundKind::Cor5,
];

pub fn bounds(c: &Common) -> R<()> {
    let (mut run, cfg): (_, BoundsConfig) = Run::start("bounds", c)?;
    let (inp, error_s, defaults) = match (cfg.inputs, &cfg.model) {
        (Some(_), Some(_)) => return Err(invalid("bounds: give either `inputs` or `model`, not both")),
        (Some(x), None) => {
            let mut inp = x.into_inputs()?;
            if let Some(c) = cfg.chi2 {
                inp.chi2 = c;
            }
            let err = cfg.error_s.ok_or_else(|| invalid("bounds: `error_s` is required with explicit inputs"))?;
            (inp, err, ALL_BOUNDS.to_vec())
        }
        (None, Some(model_path)) => {
            let paths = cfg.data.clone().ok_or_else(|| invalid("bounds: `model` needs problems, portfolio, perf and split"))?;
            let data = Data::load(&mut run, &paths)?;
            let model = load_model(&mut run, model_path)?;
            let cat = data.catalog();
            let mut inp = experiments::bound_inputs(&model, &cat, &data.split)?;
            if let Some(c) = cfg.chi2 {
                inp.chi2 = c;
            }
            let err = match cfg.error_s {
                Some(e) => e,
                None => selectors::evaluate(&model, &cat, &data.split, &data.perf)?.error_s,
            };
            (inp, err, bounds_for_model(model.kind, cfg.chi2.is_some()))
        }
        (None, None) => return Err(invalid("bounds: config needs `inputs` or `model`")),
    };
    let explicit = cfg.bounds.is_some();
    let kinds = cfg.bounds.unwrap_or(defaults);
    let mut reports = Vec::with_capacity(kinds.len());
    for k in kinds {
        let r = compute_bound(k, &inp, error_s).map_err(|e| match CliError::from(e) {
            CliError::Validation(m) => invalid(format!("{}: {m}", kind_name(k))),
            other => other,
        })?;
        if explicit && !r.applicable {
            return Err(invalid(format!(
                "{}: {}",
                kind_name(k),
                r.reason.as_deref().unwrap_or("precondition violated")
            )));
        }
        reports.push(r);
    }
    run.write("bounds.json", &json(&reports)?)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- divergence ----

fn default_n_mc() -> usize {
    10_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceConfig {
    train: GenerativeConfig,
    test: GenerativeConfig,
    #[serde(default)]
    smoothing_eps: f64,
    #[serde(default = "default_n_mc")]
    n_mc: usize,
}

pub fn divergence(c: &Common) -> R<()> {
    let (mut run, cfg): (_, DivergenceConfig) = Run::start("divergence", c)?;
    let report = distshift::divergence(&cfg.test, &cfg.train, cfg.smoothing_eps, cfg.n_mc, run.seed, c.jobs)?;
    let file = ShiftFile {
        train: cfg.train,
        test: cfg.test,
        report,
    };
    run.write("shift.json", &json(&file)?)?;
    let seed = run.seed;
    run.finish(seed)
}

// ---- experiment ----

#[derive(Deserialize)]
#[serde(untagged)]
enum ExperimentFile {
    One(Box<ExperimentConfig>),
    Many(Vec<ExperimentConfig>),
}

pub fn experiment(c: &Common) -> R<()> {
    if c.config.is_none() {
        return Err(invalid("experiment: --config is required"));
    }
    let (mut run, file): (_, ExperimentFile) = Run::start("experiment", c)?;
    let mut cfgs = match file {
        ExperimentFile::One(c) => vec![*c],
        ExperimentFile::Many(v) => v,
    };
    if cfgs.is_empty() {
        return Err(invalid("experiment: config lists no experiments"));
    }
    if let Some(s) = c.seed {
        for cfg in &mut cfgs {
            cfg.master_seed = s;
        }
    }
    for cfg in &cfgs {
        cfg.validate()?;
    }
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::Runtime(format!("{}: {e}", c.out.display())))?;
    let results = run.out_path("results.csv");
    for cfg in &cfgs {
        experiments::run_experiment(cfg, Some(&results), c.jobs)?;
    }
    let rows = experiments::read_results_csv(&artifacts::read_file(&results)?)?;
    let summaries = summaries(&rows)?;
    run.wrote(results);
    run.write("summary.json", &json(&summaries)?)?;
    let seed = cfgs[0].master_seed;
    run.finish(seed)
}

fn scenarios_in(rows: &[ResultRow]) -> Vec<Scenario> {
    let mut out: Vec<Scenario> = Vec::new();
    for r in rows {
        if !out.contains(&r.scenario) {
            out.push(r.scenario);
        }
    }
    out
}

fn summaries(rows: &[ResultRow]) -> R<Vec<experiments::Summary>> {
    scenarios_in(rows)
        .into_iter()
        .map(|s| {
            let sub: Vec<ResultRow> = rows.iter().filter(|r| r.scenario == s).cloned().collect();
            Ok(experiments::summarize(&sub)?)
        })
        .collect()
}

// ---- plot ----

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PlotConfig {
    /// Defaults to `<out>/results.csv`.
    results: Option<PathBuf>,
    metric: Metric,
    scenarios: Option<Vec<Scenario>>,
}

pub fn plot(c: &Common) -> R<()> {
    let (mut run, cfg): (_, PlotConfig) = Run::start("plot", c)?;
    let text = match &cfg.results {
        Some(p) => run.read(p)?,
        None => {
            let p = run.out_path("results.csv");
            let t = artifacts::read_file(&p)?;
            run.inputs.push(p);
            t
        }
    };
    let rows = experiments::read_results_csv(&text)?;
    let present = scenarios_in(&rows);
    let wanted = cfg.scenarios.unwrap_or_else(|| present.clone());
    if wanted.is_empty() {
        return Err(invalid("plot: results contain no rows"));
    }
    for s in wanted {
        if !present.contains(&s) {
            return Err(invalid(format!("plot: no rows for scenario {}", s.name())));
        }
        let svg = plot::plot_svg(&rows, s, cfg.metric)?;
        let name = match cfg.metric {
            Metric::Accuracy => format!("{}.svg", s.name()),
            Metric::Gap => format!("{}_gap.svg", s.name()),
        };
        run.write(&name, svg.as_bytes())?;
    }
    let seed = run.seed;
    run.finish(seed)
}
