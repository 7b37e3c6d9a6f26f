//! Online vector balancing against adaptive smooth adversaries.
//!
//! Three signing rules are provided: the greedy rule on the cosh potential
//! `Φ(d) = E_{W∼p}[cosh(λ dᵀW)]`, where `p` mixes the signed basis with the
//! uniform ball; the randomized self-balancing walk with threshold `c`; and
//! uniformly random signs as a baseline. Adversaries cover the isotropic
//! smooth families (ball, shells, adaptive shells) and the slab adversary
//! that keeps every input nearly orthogonal to the running sum.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::default_k;
use crate::domain::{History, RngStream};
use crate::stats::{binomial_stderr, wilson_interval, RateSummary};

/// Largest `|λ dᵀW|` for which cosh is evaluated.
pub const COSH_LIMIT: f64 = 700.0;
/// Potential differences at or below this are ties.
pub const TIE_TOL: f64 = 1e-12;
/// Inputs may exceed the unit norm by this much.
pub const NORM_TOL: f64 = 1e-9;

const POOL_TAG: u64 = 0x706f_6f6c;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscrepancyError {
    #[error("potential blow-up: |λ dᵀW| = {arg} exceeds {COSH_LIMIT}")]
    PotentialBlowUp { arg: f64 },
    #[error("round {round}: adversary emitted a vector of norm {norm} > 1")]
    NormTooLarge { round: usize, norm: f64 },
    #[error("round {round}: vector has dimension {got}, expected {expected}")]
    DimensionMismatch { round: usize, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { got: usize, need: usize },
    #[error("trace lacks potential values required by this threshold")]
    MissingPotential,
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Uniform direction on the unit sphere in `R^n`.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm2(&g);
        if r > 1e-300 {
            return g.into_iter().map(|v| v / r).collect();
        }
    }
}

/// Uniform point in the unit ball of `R^n`.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    sample_shell(n, 0.0, rng)
}

/// Uniform point in the shell `{inner ≤ ‖x‖₂ ≤ 1}`.
pub fn sample_shell<R: Rng + ?Sized>(n: usize, inner: f64, rng: &mut R) -> Vec<f64> {
    let dir = sample_sphere(n, rng);
    let lo = inner.powi(n as i32);
    let u: f64 = rng.random();
    let radius = (lo + u * (1.0 - lo)).powf(1.0 / n as f64).min(1.0);
    dir.into_iter().map(|v| v * radius).collect()
}

/// Inner radius of the thinnest outer shell holding volume fraction `sigma`.
pub fn shell_inner_radius(n: usize, sigma: f64) -> f64 {
    (1.0 - sigma).max(0.0).powf(1.0 / n as f64)
}

/// Running signed sum and its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyState {
    pub d: Vec<f64>,
    /// Rounds completed.
    pub t: usize,
    pub signs: Vec<Sign>,
    /// `max_{s ≤ t} ‖d_s‖_∞` for each completed round.
    pub inf_curve: Vec<f64>,
    pub history: History<Vec<f64>, Sign>,
}

impl DiscrepancyState {
    pub fn new(n: usize) -> Self {
        DiscrepancyState {
            d: vec![0.0; n],
            t: 0,
            signs: Vec::new(),
            inf_curve: Vec::new(),
            history: History::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn apply(&mut self, x: Vec<f64>, sign: Sign) {
        let e = sign.value();
        for (di, xi) in self.d.iter_mut().zip(&x) {
            *di += e * xi;
        }
        self.t += 1;
        self.signs.push(sign);
        let prev = self.inf_curve.last().copied().unwrap_or(0.0);
        self.inf_curve.push(prev.max(norm_inf(&self.d)));
        self.history.push(x, sign);
    }

    /// Recomputes `Σ ε_i X_i` from the stored history.
    pub fn rebuild(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for (x, s) in self.history.values.iter().zip(&self.history.decisions) {
            for (di, xi) in d.iter_mut().zip(x) {
                *di += s.value() * xi;
            }
        }
        d
    }
}

/// Parameters of the cosh potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub lambda: f64,
    pub pool_size: usize,
    pub k: usize,
}

impl PotentialConfig {
    /// `λ = 1/(1000 ln(k n T))` with `k = ⌈10 ln T / σ⌉`.
    pub fn for_run(n: usize, rounds: usize, sigma: f64, pool_size: usize) -> Self {
        let k = default_k(rounds, sigma);
        PotentialConfig { lambda: default_lambda(k, n, rounds), pool_size, k }
    }
}

pub fn default_lambda(k: usize, n: usize, rounds: usize) -> f64 {
    let arg = (k as f64 * n as f64 * rounds as f64).max(std::f64::consts::E);
    1.0 / (1000.0 * arg.ln())
}

/// The probe set for the potential: the signed basis (handled exactly) and a
/// frozen Monte Carlo sample from the unit ball, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePool {
    n: usize,
    ball: Vec<f64>,
}

impl ProbePool {
    pub fn draw<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Self {
        let mut ball = Vec::with_capacity(n * size);
        for _ in 0..size {
            ball.extend(sample_ball(n, rng));
        }
        ProbePool { n, ball }
    }

    /// Pool with no ball probes; the potential then averages over the signed
    /// basis alone.
    pub fn basis_only(n: usize) -> Self {
        ProbePool { n, ball: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn ball_len(&self) -> usize {
        self.ball.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn ball_probes(&self) -> impl Iterator<Item = &[f64]> {
        self.ball.chunks_exact(self.n.max(1))
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        self.ball_probes().map(|w| dot(v, w)).collect()
    }
}

fn guarded(arg: f64) -> Result<f64, DiscrepancyError> {
    if arg.abs() > COSH_LIMIT {
        Err(DiscrepancyError::PotentialBlowUp { arg })
    } else {
        Ok(arg)
    }
}

/// Mixes the basis and ball averages with weight ½ each (basis alone when the
/// pool has no ball probes).
fn mix(basis: f64, ball: f64, ball_len: usize) -> f64 {
    if ball_len == 0 {
        basis
    } else {
        0.5 * basis + 0.5 * ball
    }
}

/// `Φ(d)` over the signed basis and the frozen ball pool.
pub fn potential(d: &[f64], cfg: &PotentialConfig, pool: &ProbePool) -> Result<f64, DiscrepancyError> {
    let lambda = cfg.lambda;
    let n = d.len();
    // ±e_i contribute cosh(λ d_i) each.
    let mut basis = 0.0;
    for &di in d {
        basis += guarded(lambda * di)?.cosh();
    }
    basis /= n as f64;
    let m = pool.ball_len();
    let mut ball = 0.0;
    for w in pool.ball_probes() {
        ball += guarded(lambda * dot(d, w))?.cosh();
    }
    if m > 0 {
        ball /= m as f64;
    }
    Ok(mix(basis, ball, m))
}

/// `Φ(d + x) − Φ(d − x)`, evaluated through
/// `cosh(a + b) − cosh(a − b) = 2 sinh(a) sinh(b)` so that the comparison
/// keeps full precision when λ is small.
fn gap_from_projections(
    lambda: f64,
    d: &[f64],
    x: &[f64],
    dw: &[f64],
    xw: &[f64],
) -> Result<f64, DiscrepancyError> {
    let mut basis = 0.0;
    for (&di, &xi) in d.iter().zip(x) {
        guarded(lambda * (di.abs() + xi.abs()))?;
        basis += 2.0 * (lambda * di).sinh() * (lambda * xi).sinh();
    }
    basis /= d.len() as f64;
    let mut ball = 0.0;
    for (&a, &b) in dw.iter().zip(xw) {
        guarded(lambda * (a.abs() + b.abs()))?;
        ball += 2.0 * (lambda * a).sinh() * (lambda * b).sinh();
    }
    if !dw.is_empty() {
        ball /= dw.len() as f64;
    }
    Ok(mix(basis, ball, dw.len()))
}

/// `Φ(d + x) − Φ(d − x)` on the given pool.
pub fn potential_gap(
    d: &[f64],
    x: &[f64],
    cfg: &PotentialConfig,
    pool: &ProbePool,
) -> Result<f64, DiscrepancyError> {
    gap_from_projections(cfg.lambda, d, x, &pool.project(d), &pool.project(x))
}

fn sign_from_gap(gap: f64) -> Sign {
    if gap > TIE_TOL {
        Sign::Minus
    } else {
        Sign::Plus
    }
}

/// The sign minimizing `Φ(d + εx)`; ties go to `+1`.
pub fn choose_sign_potential(
    state: &DiscrepancyState,
    x: &[f64],
    cfg: &PotentialConfig,
    pool: &ProbePool,
) -> Result<Sign, DiscrepancyError> {
    Ok(sign_from_gap(potential_gap(&state.d, x, cfg, pool)?))
}

/// Greedy potential signer that caches the projections `dᵀW` of the running
/// sum onto the ball probes.
#[derive(Debug, Clone)]
pub struct PotentialSigner {
    cfg: PotentialConfig,
    pool: ProbePool,
    dw: Vec<f64>,
}

impl PotentialSigner {
    pub fn new(cfg: PotentialConfig, pool: ProbePool) -> Self {
        let dw = vec![0.0; pool.ball_len()];
        PotentialSigner { cfg, pool, dw }
    }

    pub fn pool(&self) -> &ProbePool {
        &self.pool
    }

    /// Chooses the sign for `x` and returns the probe projections of `x` for
    /// [`PotentialSigner::commit`].
    pub fn choose(&self, d: &[f64], x: &[f64]) -> Result<(Sign, Vec<f64>), DiscrepancyError> {
        let xw = self.pool.project(x);
        let gap = gap_from_projections(self.cfg.lambda, d, x, &self.dw, &xw)?;
        Ok((sign_from_gap(gap), xw))
    }

    pub fn commit(&mut self, sign: Sign, xw: &[f64]) {
        let e = sign.value();
        for (a, b) in self.dw.iter_mut().zip(xw) {
            *a += e * b;
        }
    }

    /// Potential of the committed sum `d`.
    pub fn phi(&self, d: &[f64]) -> Result<f64, DiscrepancyError> {
        let lambda = self.cfg.lambda;
        let mut basis = 0.0;
        for &di in d {
            basis += guarded(lambda * di)?.cosh();
        }
        basis /= d.len() as f64;
        let mut ball = 0.0;
        for &a in &self.dw {
            ball += guarded(lambda * a)?.cosh();
        }
        if !self.dw.is_empty() {
            ball /= self.dw.len() as f64;
        }
        Ok(mix(basis, ball, self.dw.len()))
    }
}

/// Threshold and failure budget of the self-balancing walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfBalancingConfig {
    pub c: f64,
    pub delta: f64,
}

impl SelfBalancingConfig {
    pub fn new(c: f64, delta: f64) -> Result<Self, DiscrepancyError> {
        if !(c > 0.0 && c.is_finite()) || !(delta > 0.0 && delta < 1.0) {
            return Err(DiscrepancyError::InvalidConfig(format!(
                "self-balancing needs c > 0 and delta in (0,1), got c = {c}, delta = {delta}"
            )));
        }
        Ok(SelfBalancingConfig { c, delta })
    }

    /// `c = 8π ln(20 k n T / δ)`.
    pub fn for_run(k: usize, n: usize, rounds: usize, delta: f64) -> Result<Self, DiscrepancyError> {
        let c = 8.0 * PI * (20.0 * k as f64 * n as f64 * rounds as f64 / delta).ln();
        Self::new(c, delta)
    }
}

/// Outcome of one self-balancing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkStep {
    Sign(Sign),
    Failure,
}

/// Declares failure when `‖d‖_∞ ≥ c` or `|⟨d, x⟩| > c`; otherwise signs `+1`
/// with probability `½ − ⟨d, x⟩/(2c)`.
pub fn choose_sign_selfbalancing<R: Rng + ?Sized>(
    state: &DiscrepancyState,
    x: &[f64],
    cfg: &SelfBalancingConfig,
    rng: &mut R,
) -> WalkStep {
    let inner = dot(&state.d, x);
    if norm_inf(&state.d) >= cfg.c || inner.abs() > cfg.c {
        return WalkStep::Failure;
    }
    let p_plus = 0.5 - inner / (2.0 * cfg.c);
    let u: f64 = rng.random();
    WalkStep::Sign(if u < p_plus { Sign::Plus } else { Sign::Minus })
}

/// Source of the input vectors; sees the full state before each round.
pub trait VectorAdversary: Sync {
    /// Smoothness of every distribution this adversary plays.
    fn sigma(&self) -> f64;
    fn next_vector(&self, state: &DiscrepancyState, rng: &mut dyn RngCore) -> Vec<f64>;
    fn describe(&self) -> String;
}

/// Built-in adversary families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversaryKind {
    /// Uniform on the unit ball (σ = 1).
    UniformBall,
    /// Uniform on the outer shell of volume fraction σ.
    Shell { sigma: f64 },
    /// Uniform on a shell picked from a radius grid by the rule
    /// `index = ⌊‖d_{t-1}‖₂⌋ mod grid`; every shell has volume fraction ≥ σ.
    AdaptiveShell { sigma: f64, grid: usize },
    /// Uniform on `{‖x‖₂ ≤ 1, |⟨x, d⟩| ≤ ‖d‖₂ / (n²T²)}`. `n` only sets
    /// the reported σ; draws follow the dimension of the state.
    Slab { n: usize, horizon: usize },
}

impl AdversaryKind {
    fn shell_radius(&self, n: usize, state: &DiscrepancyState) -> f64 {
        match *self {
            AdversaryKind::Shell { sigma } => shell_inner_radius(n, sigma),
            AdversaryKind::AdaptiveShell { sigma, grid } => {
                let r_max = shell_inner_radius(n, sigma);
                let grid = grid.max(1);
                if grid == 1 {
                    return r_max;
                }
                let idx = (norm2(&state.d).floor() as usize) % grid;
                r_max * idx as f64 / (grid - 1) as f64
            }
            _ => 0.0,
        }
    }
}

impl VectorAdversary for AdversaryKind {
    fn sigma(&self) -> f64 {
        match *self {
            AdversaryKind::UniformBall => 1.0,
            AdversaryKind::Shell { sigma } | AdversaryKind::AdaptiveShell { sigma, .. } => sigma,
            // The slab keeps at least a 1/(20 n² T²) fraction of the ball.
            AdversaryKind::Slab { n, horizon } => slab_width(n.max(1), horizon.max(1)) / 20.0,
        }
    }

    fn next_vector(&self, state: &DiscrepancyState, rng: &mut dyn RngCore) -> Vec<f64> {
        let n = state.dim();
        match self {
            AdversaryKind::UniformBall => sample_ball(n, rng),
            AdversaryKind::Shell { .. } | AdversaryKind::AdaptiveShell { .. } => {
                sample_shell(n, self.shell_radius(n, state), rng)
            }
            AdversaryKind::Slab { horizon, .. } => slab_adversary_next(&state.d, n, *horizon, rng),
        }
    }

    fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Half-width of the slab on the unit direction `d/‖d‖`: `1/(n² T²)`.
pub fn slab_width(n: usize, horizon: usize) -> f64 {
    1.0 / ((n as f64).powi(2) * (horizon as f64).powi(2))
}

/// `∫_0^θ cos^m φ dφ` by the reduction formula.
fn cos_power_integral(m: usize, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut lo = theta; // m = 0
    if m == 0 {
        return lo;
    }
    let mut hi = s; // m = 1
    if m == 1 {
        return hi;
    }
    let mut cpow_odd = 1.0; // c^(j-1) for current j
    let mut cpow_even = c; // c^(j-1) for the other parity
    // Iterate j = 2..=m, alternating parities.
    for j in 2..=m {
        let prev = if j % 2 == 0 { lo } else { hi };
        let cp = if j % 2 == 0 { &mut cpow_even } else { &mut cpow_odd };
        if j > 3 {
            *cp *= c * c;
        } else if j == 3 {
            *cp = c * c;
        }
        let val = *cp * s / j as f64 + (j as f64 - 1.0) / j as f64 * prev;
        if j % 2 == 0 {
            lo = val;
        } else {
            hi = val;
        }
    }
    if m.is_multiple_of(2) {
        lo
    } else {
        hi
    }
}

/// Draws the coordinate `s = ⟨x, u⟩` of a uniform ball point along a unit
/// direction `u`, conditioned on `|s| ≤ half_width`.
///
/// The marginal density is `∝ (1 − s²)^{(n−1)/2}`; with `s = sin θ` its CDF is
/// an integral of `cos^n θ`, inverted by safeguarded Newton iteration to a
/// relative tolerance of 1e-10.
pub fn sample_ball_coordinate<R: Rng + ?Sized>(n: usize, half_width: f64, rng: &mut R) -> f64 {
    let theta_max = half_width.clamp(0.0, 1.0).asin();
    let total = cos_power_integral(n, theta_max);
    let u: f64 = rng.random();
    let target = (2.0 * u - 1.0) * total;
    let (mut lo, mut hi) = (-theta_max, theta_max);
    let mut theta = target / total.max(f64::MIN_POSITIVE) * theta_max;
    let tol = 1e-10 * theta_max.max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let f = cos_power_integral(n, theta) - target;
        if f > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let deriv = theta.cos().powi(n as i32);
        let mut next = theta - f / deriv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - theta).abs();
        theta = next;
        if step < tol || hi - lo < tol {
            break;
        }
    }
    theta.sin().clamp(-half_width, half_width)
}

/// Uniform draw from the slab `S = {‖x‖₂ ≤ 1, |⟨x, d⟩| ≤ ‖d‖₂/(n²T²)}`.
///
/// Exact conditional sampling: the coordinate along `d` comes from the ball's
/// one-dimensional marginal restricted to the slab, the rest is uniform on
/// the orthogonal cross-section ball of radius `√(1 − s²)`. With `d = 0` the
/// constraint is vacuous and the draw is uniform on the ball.
pub fn slab_adversary_next<R: Rng + ?Sized>(d: &[f64], n: usize, horizon: usize, rng: &mut R) -> Vec<f64> {
    let dn = norm2(d);
    if dn == 0.0 {
        return sample_ball(n, rng);
    }
    let tau = slab_width(n, horizon);
    let unit: Vec<f64> = d.iter().map(|v| v / dn).collect();
    loop {
        let s = sample_ball_coordinate(n, tau, rng);
        let mut v: Vec<f64> = unit.iter().map(|u| s * u).collect();
        if n > 1 {
            // Direction in the orthogonal complement of `unit`.
            let mut g = sample_sphere(n, rng);
            let proj = dot(&g, &unit);
            for (gi, ui) in g.iter_mut().zip(&unit) {
                *gi -= proj * ui;
            }
            let gn = norm2(&g);
            if gn < 1e-12 {
                continue;
            }
            let u: f64 = rng.random();
            let radius = (1.0 - s * s).sqrt() * u.powf(1.0 / (n - 1) as f64);
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi += radius * gi / gn;
            }
        }
        if norm2(&v) <= 1.0 && dot(&v, d).abs() <= tau * dn {
            return v;
        }
    }
}

/// Rejection sampler for the slab: proposes uniform ball points until one
/// lands in the slab or `max_proposals` are spent. Returns the accepted point
/// (if any) and the number of proposals used.
pub fn slab_rejection_sample<R: Rng + ?Sized>(
    d: &[f64],
    n: usize,
    horizon: usize,
    max_proposals: u64,
    rng: &mut R,
) -> (Option<Vec<f64>>, u64) {
    let dn = norm2(d);
    let tau = slab_width(n, horizon);
    for i in 1..=max_proposals {
        let v = sample_ball(n, rng);
        if dot(&v, d).abs() <= tau * dn {
            return (Some(v), i);
        }
    }
    (None, max_proposals)
}

/// Signing rule used by [`run_discrepancy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Potential,
    SelfBalancing,
    RandomSign,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Potential => "potential",
            Algorithm::SelfBalancing => "self-balancing",
            Algorithm::RandomSign => "random-sign",
        })
    }
}

/// Fully resolved parameters of one run; written as the trace header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub algorithm: Algorithm,
    pub adversary: String,
    pub n: usize,
    pub rounds: usize,
    pub sigma: f64,
    pub k: usize,
    pub lambda: f64,
    pub pool_size: usize,
    pub pool_seed: u64,
    pub c: f64,
    pub delta: f64,
}

/// Optional overrides for [`RunHeader::resolve`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub c: Option<f64>,
}

impl RunHeader {
    /// Fills in `k`, `λ` and `c` from their defaults unless overridden.
    pub fn resolve(
        algorithm: Algorithm,
        adversary: &dyn VectorAdversary,
        n: usize,
        rounds: usize,
        pool_size: usize,
        delta: f64,
        overrides: Overrides,
    ) -> Result<Self, DiscrepancyError> {
        if n == 0 || rounds == 0 {
            return Err(DiscrepancyError::InvalidConfig("need n >= 1 and T >= 1".into()));
        }
        let sigma = adversary.sigma();
        let k = overrides.k.unwrap_or_else(|| default_k(rounds, sigma));
        let lambda = overrides.lambda.unwrap_or_else(|| default_lambda(k, n, rounds));
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(DiscrepancyError::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        let c = match overrides.c {
            Some(c) => SelfBalancingConfig::new(c, delta)?.c,
            None => SelfBalancingConfig::for_run(k, n, rounds, delta)?.c,
        };
        Ok(RunHeader {
            algorithm,
            adversary: adversary.describe(),
            n,
            rounds,
            sigma,
            k,
            lambda,
            pool_size,
            pool_seed: 0,
            c,
            delta,
        })
    }

    pub fn potential_config(&self) -> PotentialConfig {
        PotentialConfig { lambda: self.lambda, pool_size: self.pool_size, k: self.k }
    }

    pub fn self_balancing_config(&self) -> SelfBalancingConfig {
        SelfBalancingConfig { c: self.c, delta: self.delta }
    }
}

/// One row of a discrepancy trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// ±1, or 0 when the round failed.
    pub sign: i8,
    pub d_inf: f64,
    pub d_2: f64,
    pub phi: Option<f64>,
    pub failed: bool,
    /// `⟨d_{t-1}, X_t⟩`.
    pub inner: f64,
    /// `Φ_{t-1}` (potential algorithm only).
    pub phi_prev: Option<f64>,
}

/// Complete trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyRun {
    pub header: RunHeader,
    pub records: Vec<RoundRecord>,
    pub state: DiscrepancyState,
    /// Round at which the self-balancing walk declared failure.
    pub failure_round: Option<usize>,
    /// Round at which the potential overflowed.
    pub blowup_round: Option<usize>,
    /// First round with `Φ_t > T⁶`.
    pub phi_threshold_round: Option<usize>,
}

impl DiscrepancyRun {
    pub fn max_inf(&self) -> f64 {
        self.state.inf_curve.last().copied().unwrap_or(0.0)
    }

    pub fn max_l2(&self) -> f64 {
        self.records.iter().map(|r| r.d_2).fold(0.0, f64::max)
    }

    pub fn failed(&self) -> bool {
        self.failure_round.is_some() || self.blowup_round.is_some()
    }

    /// Mean of `Φ_t − Φ_{t−1}` over rounds with `Φ_{t−1} ≤ T⁶`.
    pub fn mean_delta_phi(&self) -> Option<f64> {
        let cap = (self.header.rounds as f64).powi(6);
        let deltas: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| match (r.phi, r.phi_prev) {
                (Some(p), Some(q)) if q <= cap => Some(p - q),
                _ => None,
            })
            .collect();
        if deltas.is_empty() {
            None
        } else {
            Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
        }
    }

    pub const CSV_HEADER: &'static str = "t,sign,d_inf_norm,d_2_norm,phi,failed";

    /// Writes `t, sign, d_inf_norm, d_2_norm, phi, failed` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let phi = r.phi.map(|p| p.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", r.t, r.sign, r.d_inf, r.d_2, phi, u8::from(r.failed))?;
        }
        Ok(())
    }
}

/// A trace row as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: usize,
    pub sign: i8,
    pub d_inf: f64,
    pub d_2: f64,
    pub phi: Option<f64>,
    pub failed: bool,
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<CsvRow>, DiscrepancyError> {
    let bad = |m: &str| DiscrepancyError::MalformedTrace(m.to_string());
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| bad(&e.to_string()))?;
        if i == 0 {
            if line != DiscrepancyRun::CSV_HEADER {
                return Err(bad("unexpected header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(&format!("line {}: expected 6 fields", i + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
        rows.push(CsvRow {
            t: f[0].parse().map_err(|_| bad("t"))?,
            sign: f[1].parse().map_err(|_| bad("sign"))?,
            d_inf: num(f[2])?,
            d_2: num(f[3])?,
            phi: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            failed: f[5] == "1",
        });
    }
    Ok(rows)
}

/// Plays `header.rounds` rounds of online vector balancing.
///
/// The potential algorithm draws its probe pool from a substream of `rng`
/// (seed recorded in the header). The run stops early at a self-balancing
/// failure or a potential overflow; both are recorded in the last row.
pub fn run_discrepancy(
    mut header: RunHeader,
    adversary: &dyn VectorAdversary,
    rng: &mut RngStream,
) -> Result<DiscrepancyRun, DiscrepancyError> {
    let n = header.n;
    let rounds = header.rounds;
    let mut pool_rng = rng.substream(POOL_TAG);
    header.pool_seed = pool_rng.seed();
    let mut signer = match header.algorithm {
        Algorithm::Potential => Some(PotentialSigner::new(
            header.potential_config(),
            ProbePool::draw(n, header.pool_size, &mut pool_rng),
        )),
        _ => None,
    };
    let walk = header.self_balancing_config();
    let phi_cap = (rounds as f64).powi(6);

    let mut state = DiscrepancyState::new(n);
    let mut records = Vec::with_capacity(rounds);
    let mut failure_round = None;
    let mut blowup_round = None;
    let mut phi_threshold_round = None;
    let mut phi_prev = signer.as_ref().map(|_| 1.0);

    for t in 1..=rounds {
        let x = adversary.next_vector(&state, rng);
        if x.len() != n {
            return Err(DiscrepancyError::DimensionMismatch { round: t, expected: n, got: x.len() });
        }
        let norm = norm2(&x);
        if norm > 1.0 + NORM_TOL {
            return Err(DiscrepancyError::NormTooLarge { round: t, norm });
        }
        let inner = dot(&state.d, &x);
        let failed_row = |state: &DiscrepancyState| RoundRecord {
            t,
            sign: 0,
            d_inf: norm_inf(&state.d),
            d_2: norm2(&state.d),
            phi: None,
            failed: true,
            inner,
            phi_prev,
        };

        let (sign, xw) = match header.algorithm {
            Algorithm::RandomSign => (if rng.random::<bool>() { Sign::Plus } else { Sign::Minus }, None),
            Algorithm::SelfBalancing => match choose_sign_selfbalancing(&state, &x, &walk, rng) {
                WalkStep::Sign(s) => (s, None),
                WalkStep::Failure => {
                    records.push(failed_row(&state));
                    failure_round = Some(t);
                    break;
                }
            },
            Algorithm::Potential => {
                let signer = signer.as_ref().expect("potential signer");
                match signer.choose(&state.d, &x) {
                    Ok((s, xw)) => (s, Some(xw)),
                    Err(_) => {
                        records.push(failed_row(&state));
                        blowup_round = Some(t);
                        break;
                    }
                }
            }
        };

        state.apply(x, sign);
        let mut phi = None;
        if let (Some(signer), Some(xw)) = (signer.as_mut(), xw.as_ref()) {
            signer.commit(sign, xw);
            match signer.phi(&state.d) {
                Ok(p) => {
                    if p > phi_cap && phi_threshold_round.is_none() {
                        phi_threshold_round = Some(t);
                    }
                    phi = Some(p);
                }
                Err(_) => {
                    let mut row = failed_row(&state);
                    row.sign = sign.as_i8();
                    records.push(row);
                    blowup_round = Some(t);
                    break;
                }
            }
        }
        records.push(RoundRecord {
            t,
            sign: sign.as_i8(),
            d_inf: norm_inf(&state.d),
            d_2: norm2(&state.d),
            phi,
            failed: false,
            inner,
            phi_prev,
        });
        if phi.is_some() {
            phi_prev = phi;
        }
    }

    Ok(DiscrepancyRun { header, records, state, failure_round, blowup_round, phi_threshold_round })
}

/// Deviation of an adversary's second-moment matrix from a multiple of the
/// identity at a fixed history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub samples: usize,
    /// Row-major `n × n` empirical `E[X Xᵀ]`.
    pub second_moment: Vec<f64>,
    /// `trace / n`.
    pub scale: f64,
    /// `‖Ĉ − ĉ I‖_op`.
    pub deviation: f64,
}

pub fn check_isotropy(
    adversary: &dyn VectorAdversary,
    state: &DiscrepancyState,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<IsotropyReport, DiscrepancyError> {
    if samples < 1000 {
        return Err(DiscrepancyError::TooFewObservations { got: samples, need: 1000 });
    }
    let n = state.dim();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for _ in 0..samples {
        let x = adversary.next_vector(state, rng);
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] += x[i] * x[j];
            }
        }
    }
    c /= samples as f64;
    let scale = c.trace() / n as f64;
    let dev = &c - DMatrix::<f64>::identity(n, n) * scale;
    let eig = SymmetricEigen::new(dev);
    let deviation = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(IsotropyReport {
        samples,
        second_moment: c.transpose().iter().cloned().collect(),
        scale,
        deviation,
    })
}

/// Threshold on `|⟨d_{t-1}, X_t⟩|` and the bound on the exceedance rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailThreshold {
    Fixed { threshold: f64, bound: f64 },
    /// `4 ln(4kΦ_{t−1}/δ)/λ`, bounded by `(1−σ)^k + δ`.
    PotentialTail { lambda: f64, k: usize, delta: f64, sigma: f64 },
    /// `c`, bounded by `√2 k e^{−c/8π} + (1−σ)^k`.
    SelfBalancing { c: f64, k: usize, sigma: f64 },
}

impl TailThreshold {
    pub fn bound(&self) -> f64 {
        let miss = |sigma: f64, k: usize| (1.0 - sigma).powi(k as i32);
        match *self {
            TailThreshold::Fixed { bound, .. } => bound,
            TailThreshold::PotentialTail { k, delta, sigma, .. } => miss(sigma, k) + delta,
            TailThreshold::SelfBalancing { c, k, sigma } => {
                2f64.sqrt() * k as f64 * (-c / (8.0 * PI)).exp() + miss(sigma, k)
            }
        }
        .min(1.0)
    }

    fn threshold(&self, phi_prev: Option<f64>) -> Result<f64, DiscrepancyError> {
        match *self {
            TailThreshold::Fixed { threshold, .. } => Ok(threshold),
            TailThreshold::PotentialTail { lambda, k, delta, .. } => {
                let phi = phi_prev.ok_or(DiscrepancyError::MissingPotential)?;
                Ok(4.0 * (4.0 * k as f64 * phi / delta).ln() / lambda)
            }
            TailThreshold::SelfBalancing { c, .. } => Ok(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub observations: usize,
    pub exceedances: RateSummary,
    pub bound: f64,
    /// `rate ≤ bound + 3 √(bound(1−bound)/N)`.
    pub pass: bool,
}

/// Fewest pooled rounds accepted by [`tail_probability_check`].
pub const MIN_TAIL_OBSERVATIONS: usize = 1000;

/// Pools every round of every run and counts how often `|⟨d_{t−1}, X_t⟩|`
/// exceeds the threshold.
pub fn tail_probability_check(
    runs: &[DiscrepancyRun],
    threshold: TailThreshold,
) -> Result<TailReport, DiscrepancyError> {
    let mut observations = 0usize;
    let mut exceed = 0u64;
    for run in runs {
        for r in &run.records {
            let th = threshold.threshold(r.phi_prev)?;
            observations += 1;
            if r.inner.abs() > th {
                exceed += 1;
            }
        }
    }
    if observations < MIN_TAIL_OBSERVATIONS {
        return Err(DiscrepancyError::TooFewObservations {
            got: observations,
            need: MIN_TAIL_OBSERVATIONS,
        });
    }
    let bound = threshold.bound();
    let rate = wilson_interval(exceed, observations as u64);
    let pass = rate.rate <= bound + 3.0 * binomial_stderr(bound, observations as u64);
    Ok(TailReport { observations, exceedances: rate, bound, pass })
}
