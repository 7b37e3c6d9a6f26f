//! Couplings between an adaptive sequence of smooth draws and an i.i.d.
//! uniform grid.
//!
//! Each round `j` draws `k` uniform proposals `Y_i`. A proposal that lands
//! outside the adversary's set `S_j` is kept as `Z_i = Y_i`; one that lands
//! inside is replaced by a fresh uniform draw `W_i` from `S_j`. The realized
//! value `X_j` is one of the `W_i` chosen uniformly, or a fresh draw from
//! `S_j` when no proposal hit the set. Every `Z_i` is then uniform on the
//! domain and independent of the others, `X_j` is uniform on `S_j`, and
//! `X_j ∉ {Z_i}` exactly when all proposals missed, which has probability
//! `(1 - |S_j|/n)^k`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    decompose_smooth, validate_smooth, DomainError, FiniteDomain, SampleElement, SmoothPmf,
    UniformOnSet,
};
use crate::stats::{chi_square_independence, chi_square_uniform, wilson_interval, ChiSquare, RateSummary};

/// Fewest traces accepted by [`verify_marginals`].
pub const MIN_TRACES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("round {round}: adversary emitted a set of size {size}, below the floor {floor}")]
    UndersizedSet { round: usize, size: usize, floor: usize },
    #[error("round {round}: adversary emitted a pmf that is not {sigma}-smooth")]
    NotSmooth { round: usize, sigma: f64 },
    #[error("round {round}: adversary emitted a distribution on a different domain")]
    ForeignDomain { round: usize },
    #[error("coupling needs k >= 1 and T >= 1 (got k = {k}, T = {rounds})")]
    InvalidConfig { k: usize, rounds: usize },
    #[error("need at least {need} traces, got {got}")]
    TooFewTraces { got: usize, need: usize },
    #[error("traces disagree on shape (rounds or k)")]
    MixedShapes,
}

/// An adaptive adversary that plays the uniform distribution on a set
/// chosen from the realized prefix `X_1..X_{t-1}`.
pub trait SetAdversary: Sync {
    fn sigma(&self) -> f64;
    fn next_set(&self, domain: FiniteDomain, history: &[usize]) -> UniformOnSet;
}

/// An adaptive adversary that plays an arbitrary σ-smooth pmf.
pub trait PmfAdversary: Sync {
    fn sigma(&self) -> f64;
    fn next_pmf(&self, domain: FiniteDomain, history: &[usize]) -> SmoothPmf;
}

/// Always the whole domain (σ = 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSet;

impl SetAdversary for FullSet {
    fn sigma(&self) -> f64 {
        1.0
    }

    fn next_set(&self, domain: FiniteDomain, _history: &[usize]) -> UniformOnSet {
        UniformOnSet::full(domain)
    }
}

/// The same set every round.
#[derive(Debug, Clone)]
pub struct FixedSet(pub UniformOnSet);

impl SetAdversary for FixedSet {
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    fn next_set(&self, _domain: FiniteDomain, _history: &[usize]) -> UniformOnSet {
        self.0.clone()
    }
}

/// The `⌈σn⌉` cyclically consecutive elements starting at the previous
/// realization (at element 1 in the first round).
#[derive(Debug, Clone, Copy)]
pub struct SlidingWindow {
    pub sigma: f64,
}

impl SetAdversary for SlidingWindow {
    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn next_set(&self, domain: FiniteDomain, history: &[usize]) -> UniformOnSet {
        let n = domain.size();
        let size = domain.min_set_size(self.sigma);
        let start = history.last().copied().unwrap_or(1) - 1;
        let set = (0..size).map(|o| (start + o) % n + 1).collect();
        UniformOnSet::new(domain, set).expect("window lies in the domain")
    }
}

/// A set adversary given by a closure.
pub struct FnSetAdversary<F> {
    pub sigma: f64,
    pub rule: F,
}

impl<F> SetAdversary for FnSetAdversary<F>
where
    F: Fn(FiniteDomain, &[usize]) -> UniformOnSet + Sync,
{
    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn next_set(&self, domain: FiniteDomain, history: &[usize]) -> UniformOnSet {
        (self.rule)(domain, history)
    }
}

/// The same pmf every round.
#[derive(Debug, Clone)]
pub struct StationaryPmf(pub SmoothPmf);

impl PmfAdversary for StationaryPmf {
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    fn next_pmf(&self, _domain: FiniteDomain, _history: &[usize]) -> SmoothPmf {
        self.0.clone()
    }
}

/// A pmf adversary given by a closure.
pub struct FnPmfAdversary<F> {
    pub sigma: f64,
    pub rule: F,
}

impl<F> PmfAdversary for FnPmfAdversary<F>
where
    F: Fn(FiniteDomain, &[usize]) -> SmoothPmf + Sync,
{
    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn next_pmf(&self, domain: FiniteDomain, history: &[usize]) -> SmoothPmf {
        (self.rule)(domain, history)
    }
}

/// Number of uniform proposals per round and number of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub k: usize,
    pub rounds: usize,
}

impl CouplingConfig {
    pub fn new(k: usize, rounds: usize) -> Result<Self, CouplingError> {
        if k == 0 || rounds == 0 {
            return Err(CouplingError::InvalidConfig { k, rounds });
        }
        Ok(CouplingConfig { k, rounds })
    }

    /// `k = ⌈α/σ⌉` with `α = 10 ln T`.
    pub fn with_default_k(rounds: usize, sigma: f64) -> Result<Self, CouplingError> {
        Self::new(default_k(rounds, sigma), rounds)
    }

    /// Union bound `T (1 - σ)^k` on the probability that containment fails.
    pub fn failure_bound(&self, sigma: f64) -> f64 {
        (self.rounds as f64 * (1.0 - sigma).powi(self.k as i32)).min(1.0)
    }
}

/// `⌈10 ln(T) / σ⌉`, at least 1.
pub fn default_k(rounds: usize, sigma: f64) -> usize {
    ((10.0 * (rounds as f64).ln() / sigma).ceil() as usize).max(1)
}

/// One run of the adaptive coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceRepr", into = "TraceRepr")]
pub struct CouplingTrace {
    /// Realized adaptive draws `X_1..X_T`.
    pub x: Vec<usize>,
    /// `T × k` grid of uniform draws.
    pub z: Vec<Vec<usize>>,
    /// `X_j ∈ {Z^(j)_i}` per round.
    pub contained_rounds: Vec<bool>,
    /// Conjunction of the per-round flags.
    pub contained: bool,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    #[serde(rename = "X")]
    x: Vec<usize>,
    #[serde(rename = "Z")]
    z: Vec<Vec<usize>>,
    contained: bool,
}

impl TryFrom<TraceRepr> for CouplingTrace {
    type Error = String;

    fn try_from(r: TraceRepr) -> Result<Self, Self::Error> {
        if r.x.len() != r.z.len() {
            return Err("X and Z have different numbers of rounds".into());
        }
        let trace = CouplingTrace::from_parts(r.x, r.z);
        if trace.contained != r.contained {
            return Err("stored containment flag disagrees with X and Z".into());
        }
        Ok(trace)
    }
}

impl From<CouplingTrace> for TraceRepr {
    fn from(t: CouplingTrace) -> Self {
        TraceRepr { x: t.x, z: t.z, contained: t.contained }
    }
}

impl CouplingTrace {
    pub fn from_parts(x: Vec<usize>, z: Vec<Vec<usize>>) -> Self {
        let contained_rounds: Vec<bool> =
            x.iter().zip(&z).map(|(xj, zj)| zj.contains(xj)).collect();
        let contained = contained_rounds.iter().all(|&c| c);
        CouplingTrace { x, z, contained_rounds, contained }
    }

    pub fn rounds(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }
}

/// The single-round coupling for the uniform distribution on `set`.
///
/// Returns `(x, z)` with `x` uniform on `set` and `z` a vector of `k`
/// independent uniform elements of the domain.
pub fn couple_single_round<R: Rng + ?Sized>(
    set: &UniformOnSet,
    k: usize,
    rng: &mut R,
) -> (usize, Vec<usize>) {
    let n = set.domain().size();
    let mut z = Vec::with_capacity(k);
    let mut hits = Vec::new();
    for i in 0..k {
        let y = rng.random_range(1..=n);
        if set.contains(y) {
            z.push(set.sample(rng));
            hits.push(i);
        } else {
            z.push(y);
        }
    }
    let x = if hits.is_empty() {
        set.sample(rng)
    } else {
        z[hits[rng.random_range(0..hits.len())]]
    };
    (x, z)
}

/// Runs the multi-round coupling against an adaptive set adversary.
pub fn couple_adaptive<A, R>(
    adversary: &A,
    domain: FiniteDomain,
    cfg: CouplingConfig,
    rng: &mut R,
) -> Result<CouplingTrace, CouplingError>
where
    A: SetAdversary + ?Sized,
    R: Rng + ?Sized,
{
    CouplingConfig::new(cfg.k, cfg.rounds)?;
    let floor = domain.min_set_size(adversary.sigma());
    let mut xs = Vec::with_capacity(cfg.rounds);
    let mut zs = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let set = adversary.next_set(domain, &xs);
        if set.domain() != domain {
            return Err(CouplingError::ForeignDomain { round });
        }
        if set.len() < floor {
            return Err(CouplingError::UndersizedSet { round, size: set.len(), floor });
        }
        let (x, z) = couple_single_round(&set, cfg.k, rng);
        xs.push(x);
        zs.push(z);
    }
    Ok(CouplingTrace::from_parts(xs, zs))
}

/// Runs the coupling against an adversary that plays general σ-smooth pmfs:
/// each round's pmf is decomposed into uniforms on large sets, a set is drawn
/// from the mixture, and the single-round coupling runs on it.
pub fn couple_general<A, R>(
    adversary: &A,
    domain: FiniteDomain,
    cfg: CouplingConfig,
    rng: &mut R,
) -> Result<CouplingTrace, CouplingError>
where
    A: PmfAdversary + ?Sized,
    R: Rng + ?Sized,
{
    CouplingConfig::new(cfg.k, cfg.rounds)?;
    let sigma = adversary.sigma();
    let mut xs = Vec::with_capacity(cfg.rounds);
    let mut zs = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let pmf = adversary.next_pmf(domain, &xs);
        if pmf.domain() != domain {
            return Err(CouplingError::ForeignDomain { round });
        }
        if !validate_smooth(pmf.mass(), sigma)? {
            return Err(CouplingError::NotSmooth { round, sigma });
        }
        // Decompose at the adversary's σ so components meet its set floor.
        let pmf = SmoothPmf::new(pmf.mass().to_vec(), sigma)?;
        let mixture = decompose_smooth(&pmf)?;
        let set = mixture.sample_component(rng).clone();
        let (x, z) = couple_single_round(&set, cfg.k, rng);
        xs.push(x);
        zs.push(z);
    }
    Ok(CouplingTrace::from_parts(xs, zs))
}

/// Position `Z^(round)_index` in the grid, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub round: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTest {
    pub cell: Cell,
    pub test: ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: Cell,
    pub b: Cell,
    pub test: ChiSquare,
}

/// Homogeneity of a cell's distribution across strata of the previous
/// round's realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTest {
    pub cell: Cell,
    pub strata_round: usize,
    pub test: ChiSquare,
}

/// Empirical checks of the coupling's marginal, independence and containment
/// properties over a batch of traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalsReport {
    pub traces: usize,
    pub cells: Vec<CellTest>,
    pub pairs: Vec<PairTest>,
    pub conditional: Vec<StratumTest>,
    /// Rate of traces where containment failed.
    pub failure: RateSummary,
}

impl MarginalsReport {
    pub fn min_cell_p(&self) -> f64 {
        self.cells.iter().map(|c| c.test.p_value).fold(1.0, f64::min)
    }

    pub fn min_pair_p(&self) -> f64 {
        self.pairs.iter().map(|c| c.test.p_value).fold(1.0, f64::min)
    }

    pub fn min_conditional_p(&self) -> f64 {
        self.conditional.iter().map(|c| c.test.p_value).fold(1.0, f64::min)
    }
}

/// Picks `count` distinct cell pairs; the first half are forced to span two
/// different rounds when the grid has more than one round.
pub fn select_pairs<R: Rng + ?Sized>(
    rounds: usize,
    k: usize,
    count: usize,
    rng: &mut R,
) -> Vec<(Cell, Cell)> {
    let mut pairs: Vec<(Cell, Cell)> = Vec::with_capacity(count);
    let total_cells = rounds * k;
    if total_cells < 2 {
        return pairs;
    }
    let max_pairs = total_cells * (total_cells - 1) / 2;
    let cell = |r: &mut R| Cell { round: r.random_range(1..=rounds), index: r.random_range(1..=k) };
    while pairs.len() < count.min(max_pairs) {
        let a = cell(rng);
        let b = cell(rng);
        let want_cross = rounds > 1 && pairs.len() < count / 2;
        if a == b || (want_cross && a.round == b.round) {
            continue;
        }
        let (a, b) = if (a.round, a.index) < (b.round, b.index) { (a, b) } else { (b, a) };
        if !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    pairs
}

fn z_at(trace: &CouplingTrace, c: Cell) -> usize {
    trace.z[c.round - 1][c.index - 1]
}

/// Tests every Z-cell for uniformity, the given pairs for independence,
/// round-2 cells for homogeneity across `X_1` strata, and reports the
/// containment-failure rate.
pub fn verify_marginals(
    traces: &[CouplingTrace],
    domain: FiniteDomain,
    pairs: &[(Cell, Cell)],
) -> Result<MarginalsReport, CouplingError> {
    if traces.len() < MIN_TRACES {
        return Err(CouplingError::TooFewTraces { got: traces.len(), need: MIN_TRACES });
    }
    let rounds = traces[0].rounds();
    let k = traces[0].k();
    if traces.iter().any(|t| t.rounds() != rounds || t.z.iter().any(|row| row.len() != k)) {
        return Err(CouplingError::MixedShapes);
    }
    let n = domain.size();

    let mut cells = Vec::with_capacity(rounds * k);
    for round in 1..=rounds {
        for index in 1..=k {
            let cell = Cell { round, index };
            let mut counts = vec![0u64; n];
            for t in traces {
                counts[z_at(t, cell) - 1] += 1;
            }
            cells.push(CellTest { cell, test: chi_square_uniform(&counts) });
        }
    }

    let pair_tests = pairs
        .iter()
        .map(|&(a, b)| {
            let mut table = vec![vec![0u64; n]; n];
            for t in traces {
                table[z_at(t, a) - 1][z_at(t, b) - 1] += 1;
            }
            PairTest { a, b, test: chi_square_independence(&table) }
        })
        .collect();

    let conditional = if rounds >= 2 {
        conditional_homogeneity(traces, domain, 2)
    } else {
        Vec::new()
    };

    let failures = traces.iter().filter(|t| !t.contained).count() as u64;
    Ok(MarginalsReport {
        traces: traces.len(),
        cells,
        pairs: pair_tests,
        conditional,
        failure: wilson_interval(failures, traces.len() as u64),
    })
}

/// For each cell of `round`, a homogeneity test of its distribution across
/// the strata given by the realized `X_{round-1}`.
pub fn conditional_homogeneity(
    traces: &[CouplingTrace],
    domain: FiniteDomain,
    round: usize,
) -> Vec<StratumTest> {
    let n = domain.size();
    let k = traces.first().map_or(0, CouplingTrace::k);
    (1..=k)
        .map(|index| {
            let cell = Cell { round, index };
            let mut table = vec![vec![0u64; n]; n];
            for t in traces {
                table[t.x[round - 2] - 1][z_at(t, cell) - 1] += 1;
            }
            StratumTest { cell, strata_round: round - 1, test: chi_square_independence(&table) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RngStream;

    fn dom(n: usize) -> FiniteDomain {
        FiniteDomain::new(n).unwrap()
    }

    #[test]
    fn full_set_always_contains() {
        let d = dom(5);
        let s = UniformOnSet::full(d);
        let mut rng = RngStream::new(1, 0);
        for k in 1..4 {
            for _ in 0..200 {
                let (x, z) = couple_single_round(&s, k, &mut rng);
                assert!(z.contains(&x));
            }
        }
    }

    #[test]
    fn single_round_failure_is_half_for_half_set() {
        // n = 2, S = {1}, k = 1: outcomes Y ∈ {1, 2} equally likely; only Y = 2 fails.
        let d = dom(2);
        let s = UniformOnSet::new(d, vec![1]).unwrap();
        let mut rng = RngStream::new(2, 0);
        let trials = 100_000;
        let fails = (0..trials)
            .filter(|_| {
                let (x, z) = couple_single_round(&s, 1, &mut rng);
                assert_eq!(x, 1);
                !z.contains(&x)
            })
            .count();
        let f = fails as f64 / trials as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25f64 / trials as f64).sqrt());
    }

    #[test]
    fn sigma_one_adversary_always_contained() {
        let d = dom(6);
        let mut rng = RngStream::new(3, 0);
        let cfg = CouplingConfig::new(2, 10).unwrap();
        for _ in 0..100 {
            assert!(couple_adaptive(&FullSet, d, cfg, &mut rng).unwrap().contained);
        }
    }

    #[test]
    fn undersized_set_is_rejected() {
        let d = dom(8);
        let adv = FnSetAdversary { sigma: 0.5, rule: |d: FiniteDomain, _h: &[usize]| {
            UniformOnSet::new(d, vec![1, 2]).unwrap()
        } };
        let cfg = CouplingConfig::new(2, 3).unwrap();
        let err = couple_adaptive(&adv, d, cfg, &mut RngStream::new(0, 0)).unwrap_err();
        assert_eq!(err, CouplingError::UndersizedSet { round: 1, size: 2, floor: 4 });
    }

    #[test]
    fn uniform_pmf_adversary_always_contained() {
        let d = dom(4);
        let adv = StationaryPmf(SmoothPmf::uniform(d));
        let cfg = CouplingConfig::new(1, 5).unwrap();
        let mut rng = RngStream::new(4, 0);
        for _ in 0..100 {
            assert!(couple_general(&adv, d, cfg, &mut rng).unwrap().contained);
        }
    }

    #[test]
    fn non_smooth_pmf_is_rejected() {
        let d = dom(4);
        let adv = FnPmfAdversary { sigma: 1.0, rule: |_d: FiniteDomain, _h: &[usize]| {
            SmoothPmf::new(vec![0.5, 0.5, 0.0, 0.0], 0.5).unwrap()
        } };
        let cfg = CouplingConfig::new(1, 1).unwrap();
        let err = couple_general(&adv, d, cfg, &mut RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, CouplingError::NotSmooth { round: 1, .. }));
    }

    #[test]
    fn sliding_window_wraps() {
        let d = dom(5);
        let adv = SlidingWindow { sigma: 0.6 };
        assert_eq!(adv.next_set(d, &[]).elements(), &[1, 2, 3]);
        assert_eq!(adv.next_set(d, &[4]).elements(), &[1, 4, 5]);
    }

    #[test]
    fn trace_json_shape() {
        let t = CouplingTrace::from_parts(vec![1, 2], vec![vec![1, 3], vec![3, 3]]);
        assert!(!t.contained);
        assert_eq!(t.contained_rounds, vec![true, false]);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"X":[1,2],"Z":[[1,3],[3,3]],"contained":false}"#);
        let back: CouplingTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let lie = r#"{"X":[1],"Z":[[2]],"contained":true}"#;
        assert!(serde_json::from_str::<CouplingTrace>(lie).is_err());
    }

    #[test]
    fn too_few_traces_rejected() {
        let t = vec![CouplingTrace::from_parts(vec![1], vec![vec![1]]); 10];
        assert!(matches!(
            verify_marginals(&t, dom(2), &[]),
            Err(CouplingError::TooFewTraces { .. })
        ));
    }

    #[test]
    fn default_k_values() {
        assert_eq!(default_k(1, 0.5), 1);
        // 10 ln 8 / 0.25 = 83.17...
        assert_eq!(default_k(8, 0.25), 84);
    }

    #[test]
    fn pairs_are_distinct_and_half_cross_round() {
        let mut rng = RngStream::new(9, 0);
        let pairs = select_pairs(8, 16, 20, &mut rng);
        assert_eq!(pairs.len(), 20);
        assert!(pairs[..10].iter().all(|(a, b)| a.round != b.round));
        for (i, p) in pairs.iter().enumerate() {
            assert!(!pairs[i + 1..].contains(p));
        }
    }
}
