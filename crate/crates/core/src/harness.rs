//! Seeded batch experiments with persisted traces and summaries.
//!
//! Trial `i` draws from stream `i` of the configured seed, so results do not
//! depend on scheduling. A run directory holds `config.json`,
//! `summary.json`, `trials.csv` (one row of metrics per trial) and the raw
//! traces in each module's own format; [`recompute_summary`] rebuilds the
//! summary from the raw traces alone.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{
    couple_adaptive, default_k, select_pairs, verify_marginals, CouplingConfig, CouplingTrace, FixedSet, FullSet,
    SetAdversary, SlidingWindow, MIN_TRACES,
};
use crate::discrepancy::{
    read_trace_csv, run_discrepancy, AdversaryKind, Algorithm, DiscrepancyRun, Overrides, RunHeader, VectorAdversary,
};
use crate::dispersion::{
    default_parameters, dispersion_bound, generate_discontinuities, max_interval_count, read_jsonl,
    IntervalAdversaryKind,
};
use crate::domain::{FiniteDomain, RngStream, UniformOnSet};
use crate::learning::{
    build_cover_clamped, run_learning_game, GameConfig, HedgeState, LabelAdversary, Learner, MistakeTreeAdversary,
    SmoothLabelAdversary, ThresholdUnionClass,
};
use crate::stats::{binomial_stderr, bootstrap_median_ratio, wilson_interval, MetricSummary, RateSummary};

/// Stream reserved for run-level randomness (pair selection, bootstrap).
const RUN_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed output in {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("metric {0:?} is missing from a run")]
    MissingMetric(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, message: impl ToString) -> HarnessError {
    HarnessError::Malformed { path: path.to_path_buf(), message: message.to_string() }
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Coupling(CouplingParams),
    Discrepancy(DiscrepancyParams),
    DiscrepancyLowerbound(LowerBoundParams),
    Learning(LearningParams),
    Dispersion(DispersionParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Coupling(_) => "coupling",
            Experiment::Discrepancy(_) => "discrepancy",
            Experiment::DiscrepancyLowerbound(_) => "discrepancy-lowerbound",
            Experiment::Learning(_) => "learning",
            Experiment::Dispersion(_) => "dispersion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingAdversary {
    Full,
    SlidingWindow,
    /// The same set (1-based elements) every round.
    Fixed { set: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub n: usize,
    pub sigma: f64,
    pub rounds: usize,
    /// Defaults to `⌈10 ln T / σ⌉`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_coupling_adversary")]
    pub adversary: CouplingAdversary,
    /// Random cell pairs tested for independence when there are enough traces.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

fn default_coupling_adversary() -> CouplingAdversary {
    CouplingAdversary::SlidingWindow
}

fn default_pairs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyParams {
    pub n: usize,
    pub rounds: usize,
    pub algorithm: Algorithm,
    pub adversary: AdversaryKind,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_pool() -> usize {
    1024
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub n: usize,
    pub rounds: usize,
    pub algorithm: Algorithm,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningAdversary {
    Stationary { noise: f64 },
    ErrorChasing { noise: f64 },
    MistakeTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub sigma: f64,
    pub d: usize,
    pub rounds: usize,
    pub learner: Learner,
    pub adversary: LearningAdversary,
    /// Defaults to `σ √d / √T`.
    #[serde(default)]
    pub beta: Option<f64>,
}

impl LearningParams {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.sigma * (self.d as f64).sqrt() / (self.rounds as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    pub functions: usize,
    pub per_function: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub delta: f64,
    pub adversary: IntervalAdversaryKind,
    /// Defaults to `σ (Tℓ)^{α−1}`.
    #[serde(default)]
    pub w: Option<f64>,
    /// Defaults to the bound at the chosen window, rounded up.
    #[serde(default)]
    pub k: Option<usize>,
}

impl DispersionParams {
    fn resolved(&self) -> Result<(f64, usize), HarnessError> {
        let (dw, _) = default_parameters(self.functions, self.per_function, self.sigma, self.alpha, self.delta)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let w = self.w.unwrap_or(dw);
        let k = self
            .k
            .unwrap_or_else(|| dispersion_bound(self.functions, self.per_function, self.sigma, w, self.delta).ceil() as usize);
        Ok((w, k))
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Config(msg()))
    }
}

fn sigma_ok(sigma: f64) -> bool {
    sigma > 0.0 && sigma <= 1.0
}

impl ExperimentConfig {
    /// Checks every parameter before any trial runs.
    pub fn validate(&self) -> Result<(), HarnessError> {
        check(self.trials >= 1, || "trials must be at least 1".into())?;
        match &self.experiment {
            Experiment::Coupling(p) => {
                check(p.n >= 1 && p.rounds >= 1, || "coupling needs n >= 1 and rounds >= 1".into())?;
                check(sigma_ok(p.sigma), || format!("sigma must lie in (0, 1], got {}", p.sigma))?;
                check(p.k != Some(0), || "k must be at least 1".into())?;
                if let CouplingAdversary::Fixed { set } = &p.adversary {
                    let domain = FiniteDomain::new(p.n).map_err(|e| HarnessError::Config(e.to_string()))?;
                    let u = UniformOnSet::new(domain, set.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
                    check(u.len() >= domain.min_set_size(p.sigma), || {
                        format!("fixed set has {} elements, fewer than ceil(sigma n)", u.len())
                    })?;
                }
            }
            Experiment::Discrepancy(p) => {
                check(p.n >= 1 && p.rounds >= 1, || "discrepancy needs n >= 1 and rounds >= 1".into())?;
                check(sigma_ok(p.adversary.sigma()), || "adversary sigma must lie in (0, 1]".into())?;
                check(p.delta > 0.0 && p.delta < 1.0, || "delta must lie in (0, 1)".into())?;
                RunHeader::resolve(p.algorithm, &p.adversary, p.n, p.rounds, p.pool_size, p.delta, p.overrides)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            Experiment::DiscrepancyLowerbound(p) => {
                check(p.n >= 1 && p.rounds >= 1, || "lower bound needs n >= 1 and rounds >= 1".into())?;
                check(p.delta > 0.0 && p.delta < 1.0, || "delta must lie in (0, 1)".into())?;
            }
            Experiment::Learning(p) => {
                check(sigma_ok(p.sigma), || format!("sigma must lie in (0, 1], got {}", p.sigma))?;
                check(p.rounds >= 1, || "rounds must be at least 1".into())?;
                let class =
                    ThresholdUnionClass::from_sigma(p.sigma, p.d).map_err(|e| HarnessError::Config(e.to_string()))?;
                build_cover_clamped(&class, p.beta()).map_err(|e| HarnessError::Config(e.to_string()))?;
                if let LearningAdversary::MistakeTree = p.adversary {
                    MistakeTreeAdversary::new(&class, p.rounds).map_err(|e| HarnessError::Config(e.to_string()))?;
                }
                if let LearningAdversary::Stationary { noise } | LearningAdversary::ErrorChasing { noise } = p.adversary
                {
                    check((0.0..=1.0).contains(&noise), || "noise must lie in [0, 1]".into())?;
                }
            }
            Experiment::Dispersion(p) => {
                check(p.functions >= 1 && p.per_function >= 1, || "need at least one discontinuity".into())?;
                check(sigma_ok(p.sigma), || format!("sigma must lie in (0, 1], got {}", p.sigma))?;
                let (w, _) = p.resolved()?;
                check(w > 0.0, || "w must be positive".into())?;
            }
        }
        Ok(())
    }
}

/// Per-trial result before it is written out.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub metrics: Vec<f64>,
    pub error: Option<String>,
    pub raw: Option<RawTrace>,
}

#[derive(Debug, Clone)]
pub enum RawTrace {
    Coupling(CouplingTrace),
    Discrepancy(Box<DiscrepancyRun>),
    Learning(crate::learning::RegretLedger),
    Dispersion(crate::dispersion::DiscontinuitySample),
}

/// Aggregate statistics of a run; recomputable from the raw traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub kind: String,
    pub trials: usize,
    pub completed: usize,
    pub errors: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub rates: BTreeMap<String, RateSummary>,
    pub bounds: BTreeMap<String, f64>,
    pub p_values: BTreeMap<String, f64>,
    /// Acceptance checks for `--assert`.
    pub checks: BTreeMap<String, bool>,
}

impl SummaryStats {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.values().all(|&c| c)
    }
}

pub struct ExperimentResult {
    pub summary: SummaryStats,
    pub metric_names: Vec<&'static str>,
    pub outcomes: Vec<TrialOutcome>,
}

fn metric_names(exp: &Experiment) -> Vec<&'static str> {
    match exp {
        Experiment::Coupling(_) => vec!["failed"],
        Experiment::Discrepancy(_) => vec!["max_inf", "final_l2_sq", "failed"],
        Experiment::DiscrepancyLowerbound(_) => vec!["final_l2_sq", "meets_t_over_20"],
        Experiment::Learning(_) => vec!["regret", "cum_loss", "best"],
        Experiment::Dispersion(_) => vec!["total", "split", "within_bound", "dispersed"],
    }
}

fn discrepancy_metrics(run: &DiscrepancyRun) -> Vec<f64> {
    let last = run.records.last().map_or(0.0, |r| r.d_2);
    vec![run.max_inf(), last * last, f64::from(u8::from(run.failed()))]
}

fn lower_bound_metrics(final_l2: f64, rounds: usize) -> Vec<f64> {
    let sq = final_l2 * final_l2;
    vec![sq, f64::from(u8::from(sq >= rounds as f64 / 20.0))]
}

fn learning_class(p: &LearningParams) -> Result<(ThresholdUnionClass, crate::learning::CoverGrid), HarnessError> {
    let class = ThresholdUnionClass::from_sigma(p.sigma, p.d).map_err(|e| HarnessError::Config(e.to_string()))?;
    let cover = build_cover_clamped(&class, p.beta()).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok((class, cover))
}

fn dispersion_metrics(p: &DispersionParams, points: &[crate::dispersion::Discontinuity]) -> Vec<f64> {
    let (w, k) = p.resolved().expect("validated");
    let bound = dispersion_bound(p.functions, p.per_function, p.sigma, w, p.delta);
    let (total, split) = max_interval_count(points, w);
    vec![
        total as f64,
        split as f64,
        f64::from(u8::from(total as f64 <= bound)),
        f64::from(u8::from(split <= k)),
    ]
}

fn run_trial(cfg: &ExperimentConfig, index: usize) -> TrialOutcome {
    let mut rng = RngStream::new(cfg.seed, index as u64);
    let fail = |e: String| TrialOutcome { metrics: Vec::new(), error: Some(e), raw: None };
    match &cfg.experiment {
        Experiment::Coupling(p) => {
            let domain = match FiniteDomain::new(p.n) {
                Ok(d) => d,
                Err(e) => return fail(e.to_string()),
            };
            let k = p.k.unwrap_or_else(|| default_k(p.rounds, p.sigma));
            let ccfg = CouplingConfig { k, rounds: p.rounds };
            let result = match &p.adversary {
                CouplingAdversary::Full => couple_adaptive(&FullSet, domain, ccfg, &mut rng),
                CouplingAdversary::SlidingWindow => {
                    couple_adaptive(&SlidingWindow { sigma: p.sigma }, domain, ccfg, &mut rng)
                }
                CouplingAdversary::Fixed { set } => {
                    let set = UniformOnSet::new(domain, set.clone()).expect("validated");
                    couple_adaptive(&FixedSetAt { set, sigma: p.sigma }, domain, ccfg, &mut rng)
                }
            };
            match result {
                Ok(trace) => TrialOutcome {
                    metrics: vec![f64::from(u8::from(!trace.contained))],
                    error: None,
                    raw: Some(RawTrace::Coupling(trace)),
                },
                Err(e) => fail(e.to_string()),
            }
        }
        Experiment::Discrepancy(p) => {
            let header =
                match RunHeader::resolve(p.algorithm, &p.adversary, p.n, p.rounds, p.pool_size, p.delta, p.overrides) {
                    Ok(h) => h,
                    Err(e) => return fail(e.to_string()),
                };
            match run_discrepancy(header, &p.adversary, &mut rng) {
                Ok(run) => TrialOutcome {
                    metrics: discrepancy_metrics(&run),
                    error: None,
                    raw: Some(RawTrace::Discrepancy(Box::new(run))),
                },
                Err(e) => fail(e.to_string()),
            }
        }
        Experiment::DiscrepancyLowerbound(p) => {
            let adv = AdversaryKind::Slab { n: p.n, horizon: p.rounds };
            let header =
                match RunHeader::resolve(p.algorithm, &adv, p.n, p.rounds, p.pool_size, p.delta, Overrides::default()) {
                    Ok(h) => h,
                    Err(e) => return fail(e.to_string()),
                };
            match run_discrepancy(header, &adv, &mut rng) {
                Ok(run) => {
                    let last = run.records.last().map_or(0.0, |r| r.d_2);
                    TrialOutcome {
                        metrics: lower_bound_metrics(last, p.rounds),
                        error: None,
                        raw: Some(RawTrace::Discrepancy(Box::new(run))),
                    }
                }
                Err(e) => fail(e.to_string()),
            }
        }
        Experiment::Learning(p) => {
            let (class, cover) = match learning_class(p) {
                Ok(c) => c,
                Err(e) => return fail(e.to_string()),
            };
            let mut adversary: Box<dyn LabelAdversary> = match p.adversary {
                LearningAdversary::Stationary { noise } => Box::new(SmoothLabelAdversary::Stationary {
                    target: SmoothLabelAdversary::random_target(&class, &mut rng),
                    noise,
                }),
                LearningAdversary::ErrorChasing { noise } => Box::new(SmoothLabelAdversary::ErrorChasing {
                    target: SmoothLabelAdversary::random_target(&class, &mut rng),
                    noise,
                }),
                LearningAdversary::MistakeTree => match MistakeTreeAdversary::new(&class, p.rounds) {
                    Ok(a) => Box::new(a),
                    Err(e) => return fail(e.to_string()),
                },
            };
            match run_learning_game(p.learner, adversary.as_mut(), &class, &cover, p.rounds, &mut rng) {
                Ok(ledger) => TrialOutcome {
                    metrics: vec![ledger.regret() as f64, ledger.cum_loss() as f64, ledger.best() as f64],
                    error: None,
                    raw: Some(RawTrace::Learning(ledger)),
                },
                Err(e) => fail(e.to_string()),
            }
        }
        Experiment::Dispersion(p) => {
            match generate_discontinuities(&p.adversary, p.functions, p.per_function, p.sigma, cfg.seed, &mut rng) {
                Ok(sample) => TrialOutcome {
                    metrics: dispersion_metrics(p, &sample.points),
                    error: None,
                    raw: Some(RawTrace::Dispersion(sample)),
                },
                Err(e) => fail(e.to_string()),
            }
        }
    }
}

/// Fixed set with an explicit σ (the set may be larger than `⌈σn⌉`).
struct FixedSetAt {
    set: UniformOnSet,
    sigma: f64,
}

impl SetAdversary for FixedSetAt {
    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn next_set(&self, domain: FiniteDomain, history: &[usize]) -> UniformOnSet {
        FixedSet(self.set.clone()).next_set(domain, history)
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    names: &[&'static str],
    per_trial: &[Option<Vec<f64>>],
    coupling_traces: &[CouplingTrace],
) -> SummaryStats {
    let completed: Vec<&Vec<f64>> = per_trial.iter().flatten().collect();
    let mut metrics = BTreeMap::new();
    if !completed.is_empty() {
        for (j, name) in names.iter().enumerate() {
            let vals: Vec<f64> = completed.iter().map(|m| m[j]).collect();
            metrics.insert(name.to_string(), MetricSummary::from_values(&vals));
        }
    }
    let count = |j: usize| completed.iter().filter(|m| m[j] != 0.0).count() as u64;
    let n_done = completed.len() as u64;
    let mut rates = BTreeMap::new();
    let mut bounds = BTreeMap::new();
    let mut p_values = BTreeMap::new();
    let mut checks = BTreeMap::new();
    match &cfg.experiment {
        Experiment::Coupling(p) => {
            let k = p.k.unwrap_or_else(|| default_k(p.rounds, p.sigma));
            let bound = CouplingConfig { k, rounds: p.rounds }.failure_bound(p.sigma);
            let rate = wilson_interval(count(0), n_done);
            checks.insert(
                "failure_rate_within_bound".into(),
                rate.rate <= bound + 3.0 * binomial_stderr(bound, n_done),
            );
            rates.insert("containment_failure".into(), rate);
            bounds.insert("containment_failure".into(), bound);
            if coupling_traces.len() >= MIN_TRACES {
                let domain = FiniteDomain::new(p.n).expect("validated");
                let mut prng = RngStream::new(cfg.seed, RUN_STREAM);
                let pairs = select_pairs(p.rounds, k, p.pairs, &mut prng);
                if let Ok(report) = verify_marginals(coupling_traces, domain, &pairs) {
                    p_values.insert("min_cell".into(), report.min_cell_p());
                    p_values.insert("min_pair".into(), report.min_pair_p());
                    p_values.insert("min_conditional".into(), report.min_conditional_p());
                    checks.insert("cells_uniform".into(), report.min_cell_p() > 0.001);
                    checks.insert("pairs_independent".into(), report.min_pair_p() > 0.001);
                }
            }
        }
        Experiment::Discrepancy(_) => {
            let rate = wilson_interval(count(2), n_done);
            checks.insert("no_failures".into(), rate.successes == 0);
            rates.insert("failure".into(), rate);
        }
        Experiment::DiscrepancyLowerbound(p) => {
            let rate = wilson_interval(count(1), n_done);
            checks.insert("growth_t_over_20".into(), rate.rate >= 0.99);
            rates.insert("meets_t_over_20".into(), rate);
            bounds.insert("t_over_20".into(), p.rounds as f64 / 20.0);
        }
        Experiment::Learning(p) => {
            let t = p.rounds as f64;
            let d = p.d as f64;
            let upper = 5.0 * (t * d * (t / (d * p.sigma)).ln()).sqrt();
            let lower = 0.1 * (d * t * (1.0 / (p.sigma * d)).log2()).sqrt();
            bounds.insert("regret_upper".into(), upper);
            bounds.insert("regret_lower".into(), lower);
            let (_, cover) = learning_class(p).expect("validated");
            bounds.insert("experts".into(), cover.len() as f64);
            bounds.insert("eta".into(), HedgeState::new(cover.len(), p.rounds).eta);
            if let Some(m) = metrics.get("regret") {
                match p.adversary {
                    LearningAdversary::MistakeTree => checks.insert("regret_lower".into(), m.mean >= lower),
                    _ => checks.insert("regret_upper".into(), m.mean <= upper),
                };
            }
        }
        Experiment::Dispersion(p) => {
            let (w, k) = p.resolved().expect("validated");
            let within = wilson_interval(count(2), n_done);
            checks.insert("bound_rate".into(), within.rate >= 1.0 - p.delta);
            rates.insert("within_bound".into(), within);
            rates.insert("dispersed".into(), wilson_interval(count(3), n_done));
            bounds.insert("w".into(), w);
            bounds.insert("k".into(), k as f64);
            bounds.insert("bound".into(), dispersion_bound(p.functions, p.per_function, p.sigma, w, p.delta));
        }
    }
    SummaryStats {
        kind: cfg.experiment.name().into(),
        trials: cfg.trials,
        completed: completed.len(),
        errors: per_trial.len() - completed.len(),
        metrics,
        rates,
        bounds,
        p_values,
        checks,
    }
}

/// Runs every trial on a pool of `parallelism` threads and, when `out_dir`
/// is given, writes the run directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    parallelism: usize,
) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, i)).collect());
    let names = metric_names(&cfg.experiment);
    let per_trial: Vec<Option<Vec<f64>>> =
        outcomes.iter().map(|o| if o.error.is_none() { Some(o.metrics.clone()) } else { None }).collect();
    let coupling: Vec<CouplingTrace> = outcomes
        .iter()
        .filter_map(|o| match &o.raw {
            Some(RawTrace::Coupling(t)) => Some(t.clone()),
            _ => None,
        })
        .collect();
    let summary = summarize(cfg, &names, &per_trial, &coupling);
    let result = ExperimentResult { summary, metric_names: names, outcomes };
    if let Some(dir) = out_dir {
        write_run(cfg, &result, dir)?;
    }
    Ok(result)
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| malformed(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn trace_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join("traces").join(format!("trial-{index:05}.{ext}"))
}

fn write_run(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.join("traces")).map_err(io_err(dir))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("summary.json"), &result.summary)?;

    let path = dir.join("trials.csv");
    let mut w = create(&path)?;
    let mut header = vec!["trial".to_string()];
    header.extend(result.metric_names.iter().map(|s| s.to_string()));
    header.push("error".into());
    let io = io_err(&path);
    let mut lines = vec![header.join(",")];
    for (i, o) in result.outcomes.iter().enumerate() {
        let mut row = vec![i.to_string()];
        if o.error.is_some() {
            row.extend(result.metric_names.iter().map(|_| String::new()));
        } else {
            row.extend(o.metrics.iter().map(|m| m.to_string()));
        }
        row.push(o.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        lines.push(row.join(","));
    }
    writeln!(w, "{}", lines.join("\n")).and_then(|_| w.flush()).map_err(io)?;

    if let Experiment::Coupling(_) = cfg.experiment {
        let path = dir.join("traces").join("coupling.jsonl");
        let mut w = create(&path)?;
        for o in &result.outcomes {
            if let Some(RawTrace::Coupling(t)) = &o.raw {
                serde_json::to_writer(&mut w, t).map_err(|e| malformed(&path, e))?;
                writeln!(w).map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        return Ok(());
    }
    if let Experiment::Learning(p) = &cfg.experiment {
        let (class, cover) = learning_class(p)?;
        let game = GameConfig {
            m: class.m(),
            d: class.d(),
            sigma: p.sigma,
            beta: p.beta(),
            experts: cover.len(),
            eta: HedgeState::new(cover.len(), p.rounds).eta,
            rounds: p.rounds,
            seed: cfg.seed,
        };
        write_json(&dir.join("game.json"), &game)?;
    }
    for (i, o) in result.outcomes.iter().enumerate() {
        match &o.raw {
            Some(RawTrace::Discrepancy(run)) => {
                write_json(&trace_path(dir, i, "json"), &run.header)?;
                let path = trace_path(dir, i, "csv");
                let mut w = create(&path)?;
                run.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
            }
            Some(RawTrace::Learning(ledger)) => {
                let path = trace_path(dir, i, "csv");
                let mut w = create(&path)?;
                ledger.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
            }
            Some(RawTrace::Dispersion(sample)) => {
                let path = trace_path(dir, i, "jsonl");
                let mut w = create(&path)?;
                sample.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn read_config(dir: &Path) -> Result<ExperimentConfig, HarnessError> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| malformed(&path, e))
}

/// Header and rows of a `trials.csv`.
pub fn read_trials(dir: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), HarnessError> {
    let path = dir.join("trials.csv");
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut lines = BufReader::new(file).lines();
    let header: Vec<String> = match lines.next() {
        Some(l) => l.map_err(io_err(&path))?.split(',').map(String::from).collect(),
        None => return Err(malformed(&path, "empty file")),
    };
    let mut rows = Vec::new();
    for l in lines {
        let l = l.map_err(io_err(&path))?;
        let row: Vec<String> = l.split(',').map(String::from).collect();
        if row.len() != header.len() {
            return Err(malformed(&path, "row width differs from header"));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Rebuilds the summary of a run directory from `config.json` and the raw
/// traces; `trials.csv` is consulted only for which trials errored.
pub fn recompute_summary(dir: &Path) -> Result<SummaryStats, HarnessError> {
    let cfg = read_config(dir)?;
    let (header, rows) = read_trials(dir)?;
    let err_col = header.len() - 1;
    let names = metric_names(&cfg.experiment);
    let mut per_trial: Vec<Option<Vec<f64>>> = Vec::with_capacity(rows.len());
    let mut coupling = Vec::new();
    let mut coupling_lines = None;
    if let Experiment::Coupling(_) = cfg.experiment {
        let path = dir.join("traces").join("coupling.jsonl");
        let file = File::open(&path).map_err(io_err(&path))?;
        coupling_lines = Some((path, BufReader::new(file).lines()));
    }
    for (i, row) in rows.iter().enumerate() {
        if !row[err_col].is_empty() {
            per_trial.push(None);
            continue;
        }
        let metrics = match &cfg.experiment {
            Experiment::Coupling(_) => {
                let (path, lines) = coupling_lines.as_mut().expect("opened");
                let line = lines
                    .next()
                    .ok_or_else(|| malformed(path, "fewer traces than completed trials"))?
                    .map_err(io_err(path))?;
                let trace: CouplingTrace = serde_json::from_str(&line).map_err(|e| malformed(path, e))?;
                let m = vec![f64::from(u8::from(!trace.contained))];
                coupling.push(trace);
                m
            }
            Experiment::Discrepancy(_) | Experiment::DiscrepancyLowerbound(_) => {
                let path = trace_path(dir, i, "csv");
                let file = File::open(&path).map_err(io_err(&path))?;
                let rows = read_trace_csv(BufReader::new(file)).map_err(|e| malformed(&path, e))?;
                let last = rows.last().map_or(0.0, |r| r.d_2);
                match &cfg.experiment {
                    Experiment::DiscrepancyLowerbound(p) => lower_bound_metrics(last, p.rounds),
                    _ => {
                        let max_inf = rows.iter().map(|r| r.d_inf).fold(0.0, f64::max);
                        let failed = rows.iter().any(|r| r.failed);
                        vec![max_inf, last * last, f64::from(u8::from(failed))]
                    }
                }
            }
            Experiment::Learning(_) => {
                let path = trace_path(dir, i, "csv");
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let last = text.lines().skip(1).last().unwrap_or("");
                let f: Vec<&str> = last.split(',').collect();
                if f.len() != 7 {
                    return Err(malformed(&path, "ledger row must have 7 fields"));
                }
                let cum: f64 = f[5].parse().map_err(|e| malformed(&path, e))?;
                let regret: f64 = f[6].parse().map_err(|e| malformed(&path, e))?;
                vec![regret, cum, cum - regret]
            }
            Experiment::Dispersion(p) => {
                let path = trace_path(dir, i, "jsonl");
                let file = File::open(&path).map_err(io_err(&path))?;
                let points = read_jsonl(BufReader::new(file)).map_err(|e| malformed(&path, e))?;
                dispersion_metrics(p, &points)
            }
        };
        per_trial.push(Some(metrics));
    }
    Ok(summarize(&cfg, &names, &per_trial, &coupling))
}

pub fn read_summary(dir: &Path) -> Result<SummaryStats, HarnessError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| malformed(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metric: String,
    pub trials_a: usize,
    pub trials_b: usize,
    #[serde(flatten)]
    pub ratio: crate::stats::RatioEstimate,
}

/// Number of bootstrap resamples used by [`compare_runs`].
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

fn metric_column(dir: &Path, metric: &str) -> Result<Vec<f64>, HarnessError> {
    let (header, rows) = read_trials(dir)?;
    let col = header[..header.len() - 1]
        .iter()
        .position(|h| h == metric)
        .ok_or_else(|| HarnessError::MissingMetric(metric.to_string()))?;
    let err_col = header.len() - 1;
    let path = dir.join("trials.csv");
    rows.iter()
        .filter(|r| r[err_col].is_empty())
        .map(|r| r[col].parse::<f64>().map_err(|e| malformed(&path, e)))
        .collect()
}

/// Ratio of the medians of `metric` in two runs with a seeded bootstrap CI.
pub fn compare_runs(a: &Path, b: &Path, metric: &str, seed: u64) -> Result<ComparisonReport, HarnessError> {
    let va = metric_column(a, metric)?;
    let vb = metric_column(b, metric)?;
    if va.is_empty() || vb.is_empty() {
        return Err(HarnessError::MissingMetric(metric.to_string()));
    }
    let mut rng = RngStream::new(seed, RUN_STREAM);
    let ratio = bootstrap_median_ratio(&va, &vb, BOOTSTRAP_RESAMPLES, &mut rng);
    Ok(ComparisonReport { metric: metric.to_string(), trials_a: va.len(), trials_b: vb.len(), ratio })
}
