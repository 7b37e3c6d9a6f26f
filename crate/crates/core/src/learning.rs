//! Smoothed online prediction for unions of thresholds.
//!
//! The instance space is the discretized interval `[m] = {1, …, m}` with
//! `m = 1/σ`: a smooth adversary on `[0, 1]` is projected cell-wise onto
//! `[m]` by [`project`], and any distribution on the cells is σ-smooth
//! because each cell has width σ. The class splits `[m]` into `d` equal
//! blocks and places one threshold in each.

use std::io::{self, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::History;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("invalid class: {0}")]
    InvalidClass(String),
    #[error("beta must lie in (0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("beta = {beta} gives grid spacing below one index; use beta >= {feasible}")]
    BetaTooSmall { beta: f64, feasible: f64 },
    #[error("m/d = {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("expected {expected} losses, got {got}")]
    LossLength { expected: usize, got: usize },
    #[error("instance {x} outside [1, {m}]")]
    OutOfDomain { x: usize, m: usize },
    #[error("invalid adversary: {0}")]
    InvalidAdversary(String),
}

/// Unions of `d` thresholds, one per contiguous block of `[m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdUnionClass {
    m: usize,
    d: usize,
}

impl ThresholdUnionClass {
    pub fn new(m: usize, d: usize) -> Result<Self, LearningError> {
        if m == 0 || d == 0 || !m.is_multiple_of(d) {
            return Err(LearningError::InvalidClass(format!("need d | m with m, d >= 1 (m = {m}, d = {d})")));
        }
        Ok(ThresholdUnionClass { m, d })
    }

    /// The class at smoothness σ: `m = round(1/σ)`.
    pub fn from_sigma(sigma: f64, d: usize) -> Result<Self, LearningError> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(LearningError::InvalidClass(format!("sigma must lie in (0, 1], got {sigma}")));
        }
        Self::new((1.0 / sigma).round() as usize, d)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn block_len(&self) -> usize {
        self.m / self.d
    }

    /// Zero-based block of instance `x ∈ [m]`.
    pub fn block_of(&self, x: usize) -> usize {
        (x - 1) / self.block_len()
    }

    /// First and last instance of block `b`.
    pub fn block_range(&self, b: usize) -> (usize, usize) {
        let s = self.block_len();
        (b * s + 1, (b + 1) * s)
    }

    /// `(m/d)^d`.
    pub fn size(&self) -> u128 {
        (self.block_len() as u128).pow(self.d as u32)
    }

    pub fn contains(&self, h: &Hypothesis) -> bool {
        h.gamma.len() == self.d
            && h.gamma.iter().enumerate().all(|(b, &g)| {
                let (lo, hi) = self.block_range(b);
                (lo..=hi).contains(&g)
            })
    }

    /// Every hypothesis, in lexicographic order of thresholds.
    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        let grids: Vec<Vec<usize>> = (0..self.d)
            .map(|b| {
                let (lo, hi) = self.block_range(b);
                (lo..=hi).collect()
            })
            .collect();
        product(&grids)
    }
}

fn product(grids: &[Vec<usize>]) -> Vec<Hypothesis> {
    let mut out = vec![Vec::new()];
    for g in grids {
        let mut next = Vec::with_capacity(out.len() * g.len());
        for prefix in &out {
            for &v in g {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter().map(|gamma| Hypothesis { gamma }).collect()
}

/// Maps a point of `[0, 1]` to its cell in `[m]`.
pub fn project(u: f64, m: usize) -> usize {
    ((u.clamp(0.0, 1.0) * m as f64).floor() as usize + 1).min(m)
}

/// Threshold tuple; `h(x) = 1` iff `x ≥ γ_b` for the block `b` of `x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub gamma: Vec<usize>,
}

impl Hypothesis {
    pub fn eval(&self, class: &ThresholdUnionClass, x: usize) -> bool {
        x >= self.gamma[class.block_of(x)]
    }
}

/// Disagreement mass under the uniform distribution on `[m]`.
pub fn uniform_distance(class: &ThresholdUnionClass, a: &Hypothesis, b: &Hypothesis) -> f64 {
    let gap: usize = a.gamma.iter().zip(&b.gamma).map(|(x, y)| x.abs_diff(*y)).sum();
    gap as f64 / class.m as f64
}

/// `d · log₂(m/d)`.
pub fn littlestone_dim(class: &ThresholdUnionClass) -> Result<usize, LearningError> {
    let s = class.block_len();
    if !s.is_power_of_two() {
        return Err(LearningError::NotPowerOfTwo(s));
    }
    Ok(class.d * s.trailing_zeros() as usize)
}

/// Product grid of thresholds covering the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverGrid {
    pub beta: f64,
    pub spacing: usize,
    /// Grid thresholds per block.
    pub grids: Vec<Vec<usize>>,
    pub hypotheses: Vec<Hypothesis>,
    /// Set when the spacing was raised to one index.
    pub clamped: bool,
}

impl CoverGrid {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Largest distance from a class member to its nearest grid hypothesis,
    /// by exhaustive search over the class.
    pub fn max_distance(&self, class: &ThresholdUnionClass) -> f64 {
        class
            .hypotheses()
            .iter()
            .map(|h| {
                self.hypotheses
                    .iter()
                    .map(|g| uniform_distance(class, h, g))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

fn cover_with_spacing(class: &ThresholdUnionClass, beta: f64, spacing: usize, clamped: bool) -> CoverGrid {
    let grids: Vec<Vec<usize>> = (0..class.d)
        .map(|b| {
            let (lo, hi) = class.block_range(b);
            (lo..=hi).step_by(spacing).collect()
        })
        .collect();
    let hypotheses = product(&grids);
    CoverGrid { beta, spacing, grids, hypotheses, clamped }
}

/// Grid with per-block spacing `⌊β m / d⌋`; errors if that is below one.
pub fn build_cover(class: &ThresholdUnionClass, beta: f64) -> Result<CoverGrid, LearningError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LearningError::InvalidBeta(beta));
    }
    let spacing = (beta * class.block_len() as f64).floor() as usize;
    if spacing < 1 {
        return Err(LearningError::BetaTooSmall { beta, feasible: class.d as f64 / class.m as f64 });
    }
    Ok(cover_with_spacing(class, beta, spacing, false))
}

/// As [`build_cover`], but falls back to the full threshold grid when the
/// spacing would be below one.
pub fn build_cover_clamped(class: &ThresholdUnionClass, beta: f64) -> Result<CoverGrid, LearningError> {
    match build_cover(class, beta) {
        Err(LearningError::BetaTooSmall { .. }) => Ok(cover_with_spacing(class, beta, 1, true)),
        other => other,
    }
}

/// Exponential weights in the log domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub log_weights: Vec<f64>,
    pub eta: f64,
    pub cum_losses: Vec<f64>,
}

impl HedgeState {
    /// `η = √(8 ln N / T)`.
    pub fn new(experts: usize, rounds: usize) -> Self {
        let eta = if experts > 1 && rounds > 0 {
            (8.0 * (experts as f64).ln() / rounds as f64).sqrt()
        } else {
            0.0
        };
        Self::with_eta(experts, eta)
    }

    pub fn with_eta(experts: usize, eta: f64) -> Self {
        HedgeState { log_weights: vec![0.0; experts], eta, cum_losses: vec![0.0; experts] }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// Normalized weights.
    pub fn distribution(&self) -> Vec<f64> {
        let top = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }

    pub fn sample_expert<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.distribution();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Applies `w ← w · exp(−η ℓ)` and returns the distribution that was in
    /// force for this round.
    pub fn step(&mut self, losses: &[f64]) -> Result<Vec<f64>, LearningError> {
        if losses.len() != self.len() {
            return Err(LearningError::LossLength { expected: self.len(), got: losses.len() });
        }
        let played = self.distribution();
        for ((lw, cl), &l) in self.log_weights.iter_mut().zip(self.cum_losses.iter_mut()).zip(losses) {
            *lw -= self.eta * l;
            *cl += l;
        }
        Ok(played)
    }
}

/// Exact best hypothesis on a transcript, block by block with prefix sums.
/// Ties resolve to the smallest threshold.
pub fn best_in_hindsight(class: &ThresholdUnionClass, transcript: &[(usize, bool)]) -> (Hypothesis, u64) {
    let mut ones = vec![0u64; class.m + 1];
    let mut zeros = vec![0u64; class.m + 1];
    for &(x, y) in transcript {
        if y {
            ones[x] += 1;
        } else {
            zeros[x] += 1;
        }
    }
    let mut gamma = Vec::with_capacity(class.d);
    let mut total = 0;
    for b in 0..class.d {
        let (lo, hi) = class.block_range(b);
        // cost(γ) = ones below γ + zeros at or above γ.
        let mut cost: u64 = (lo..=hi).map(|x| zeros[x]).sum();
        let (mut best, mut arg) = (cost, lo);
        for g in lo + 1..=hi {
            cost = cost + ones[g - 1] - zeros[g - 1];
            if cost < best {
                best = cost;
                arg = g;
            }
        }
        gamma.push(arg);
        total += best;
    }
    (Hypothesis { gamma }, total)
}

/// `sup_{h ∈ class} min_{h' ∈ cover} Σ_t 1(h(x_t) ≠ h'(x_t))`.
///
/// Both the class and the grid are products over blocks, so the optimum
/// splits per block; two thresholds `γ < γ'` disagree exactly on `[γ, γ')`.
pub fn net_error(class: &ThresholdUnionClass, cover: &CoverGrid, points: &[usize]) -> u64 {
    let mut count = vec![0u64; class.m + 2];
    for &x in points {
        count[x] += 1;
    }
    // prefix[x] = number of points < x.
    let mut prefix = vec![0u64; class.m + 2];
    for x in 1..=class.m + 1 {
        prefix[x] = prefix[x - 1] + count[x - 1];
    }
    let between = |a: usize, b: usize| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prefix[hi] - prefix[lo]
    };
    let mut total = 0;
    for b in 0..class.d {
        let (lo, hi) = class.block_range(b);
        let grid = &cover.grids[b];
        let worst = (lo..=hi)
            .map(|g| grid.iter().map(|&c| between(g, c)).min().unwrap_or(0))
            .max()
            .unwrap_or(0);
        total += worst;
    }
    total
}

/// Transcript so far: values are `(x_t, y_t)`, decisions the learner's
/// realized predictions.
pub type GameHistory = History<(usize, bool), bool>;

/// Chooses the next labeled instance after seeing the history.
pub trait LabelAdversary {
    fn next(&mut self, class: &ThresholdUnionClass, history: &GameHistory, rng: &mut dyn RngCore) -> (usize, bool);
}

fn noisy_label(h: &Hypothesis, class: &ThresholdUnionClass, x: usize, noise: f64, rng: &mut dyn RngCore) -> bool {
    let clean = h.eval(class, x);
    if rng.random::<f64>() < noise {
        !clean
    } else {
        clean
    }
}

/// Instances uniform on `[m]` (or on one block), labels from a target
/// hypothesis flipped with probability `noise`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothLabelAdversary {
    /// Uniform instances for every round.
    Stationary { target: Hypothesis, noise: f64 },
    /// Uniform on the block where the learner has erred most so far
    /// (uniform on `[m]` before the first mistake). Every block distribution
    /// is `(1/d)`-smooth on `[m]`.
    ErrorChasing { target: Hypothesis, noise: f64 },
}

impl SmoothLabelAdversary {
    /// Target thresholds drawn uniformly from the class.
    pub fn random_target<R: Rng + ?Sized>(class: &ThresholdUnionClass, rng: &mut R) -> Hypothesis {
        let gamma = (0..class.d)
            .map(|b| {
                let (lo, hi) = class.block_range(b);
                rng.random_range(lo..=hi)
            })
            .collect();
        Hypothesis { gamma }
    }
}

impl LabelAdversary for SmoothLabelAdversary {
    fn next(&mut self, class: &ThresholdUnionClass, history: &GameHistory, rng: &mut dyn RngCore) -> (usize, bool) {
        match self {
            SmoothLabelAdversary::Stationary { target, noise } => {
                let x = rng.random_range(1..=class.m);
                (x, noisy_label(target, class, x, *noise, rng))
            }
            SmoothLabelAdversary::ErrorChasing { target, noise } => {
                let mut errors = vec![0usize; class.d];
                for (&(x, y), &p) in history.values.iter().zip(&history.decisions) {
                    if p != y {
                        errors[class.block_of(x)] += 1;
                    }
                }
                let top = errors.iter().copied().max().unwrap_or(0);
                let x = if top == 0 {
                    rng.random_range(1..=class.m)
                } else {
                    let b = errors.iter().position(|&e| e == top).unwrap_or(0);
                    let (lo, hi) = class.block_range(b);
                    rng.random_range(lo..=hi)
                };
                (x, noisy_label(target, class, x, *noise, rng))
            }
        }
    }
}

/// Walks the shattered binary-search tree of the class with random labels.
///
/// The horizon is cut into `d · log₂(m/d)` epochs of near-equal length,
/// assigned to blocks round-robin. During an epoch the adversary repeats the
/// query point splitting the active block's remaining thresholds in half and
/// draws fair labels; at the end of the epoch it descends into the half
/// agreeing with the majority label (ties count as label 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MistakeTreeAdversary {
    rounds: usize,
    epochs: usize,
    /// Per block: first remaining threshold and count of remaining thresholds.
    active: Vec<(usize, usize)>,
    epoch: usize,
    ones: usize,
    seen: usize,
}

impl MistakeTreeAdversary {
    pub fn new(class: &ThresholdUnionClass, rounds: usize) -> Result<Self, LearningError> {
        let epochs = littlestone_dim(class)?;
        let active = (0..class.d).map(|b| (class.block_range(b).0, class.block_len())).collect();
        Ok(MistakeTreeAdversary { rounds, epochs, active, epoch: 0, ones: 0, seen: 0 })
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Remaining thresholds per block.
    pub fn active(&self) -> &[(usize, usize)] {
        &self.active
    }

    /// Last round (1-based, inclusive) of epoch `e`.
    fn epoch_end(&self, e: usize) -> usize {
        ((e + 1) * self.rounds) / self.epochs.max(1)
    }

    fn query(&self) -> usize {
        let b = self.epoch % self.active.len();
        let (lo, c) = self.active[b];
        lo + c / 2 - 1
    }

    fn descend(&mut self) {
        let b = self.epoch % self.active.len();
        let (lo, c) = self.active[b];
        if c >= 2 {
            let half = c / 2;
            self.active[b] = if 2 * self.ones >= self.seen { (lo, half) } else { (lo + half, c - half) };
        }
    }
}

impl LabelAdversary for MistakeTreeAdversary {
    fn next(&mut self, class: &ThresholdUnionClass, history: &GameHistory, rng: &mut dyn RngCore) -> (usize, bool) {
        let t = history.len() + 1;
        while self.epoch + 1 < self.epochs && t > self.epoch_end(self.epoch) {
            if self.seen > 0 {
                self.descend();
            }
            self.epoch += 1;
            self.ones = 0;
            self.seen = 0;
        }
        let x = if self.epochs == 0 { rng.random_range(1..=class.m) } else { self.query() };
        let y = rng.random::<bool>();
        self.seen += 1;
        self.ones += usize::from(y);
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    Hedge,
    FollowTheLeader,
}

/// Parameters of one game, written alongside its ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    pub beta: f64,
    #[serde(rename = "N")]
    pub experts: usize,
    pub eta: f64,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: usize,
    pub x: usize,
    pub y: bool,
    pub prediction: bool,
    pub loss: u8,
    pub cum_loss: u64,
    pub best: u64,
    pub regret: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
}

impl RegretLedger {
    pub fn regret(&self) -> i64 {
        self.rows.last().map_or(0, |r| r.regret)
    }

    pub fn cum_loss(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cum_loss)
    }

    pub fn best(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.best)
    }

    pub fn transcript(&self) -> Vec<(usize, bool)> {
        self.rows.iter().map(|r| (r.x, r.y)).collect()
    }

    pub const CSV_HEADER: &'static str = "t,x,y,prediction,loss,cum_loss,regret_so_far";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.t,
                r.x,
                u8::from(r.y),
                u8::from(r.prediction),
                r.loss,
                r.cum_loss,
                r.regret
            )?;
        }
        Ok(())
    }
}

/// Per-block mistake counts of every threshold, updated one point at a time.
struct HindsightTracker {
    cost: Vec<u64>,
    class: ThresholdUnionClass,
}

impl HindsightTracker {
    fn new(class: ThresholdUnionClass) -> Self {
        HindsightTracker { cost: vec![0; class.m + 1], class }
    }

    fn add(&mut self, x: usize, y: bool) {
        let (lo, hi) = self.class.block_range(self.class.block_of(x));
        if y {
            // Thresholds above x miss a positive.
            for g in x + 1..=hi {
                self.cost[g] += 1;
            }
        } else {
            for g in lo..=x {
                self.cost[g] += 1;
            }
        }
    }

    fn best(&self) -> u64 {
        (0..self.class.d)
            .map(|b| {
                let (lo, hi) = self.class.block_range(b);
                self.cost[lo..=hi].iter().copied().min().unwrap_or(0)
            })
            .sum()
    }
}

/// Plays `rounds` rounds: the adversary picks `(x_t, y_t)` from the history,
/// the learner sees `x_t` and predicts with a cover hypothesis (sampled from
/// the Hedge weights, or the current leader), then every cover hypothesis is
/// charged its 0/1 loss.
pub fn run_learning_game(
    learner: Learner,
    adversary: &mut dyn LabelAdversary,
    class: &ThresholdUnionClass,
    cover: &CoverGrid,
    rounds: usize,
    rng: &mut dyn RngCore,
) -> Result<RegretLedger, LearningError> {
    let mut hedge = HedgeState::new(cover.len(), rounds);
    let mut history = GameHistory::new();
    let mut tracker = HindsightTracker::new(*class);
    let mut rows = Vec::with_capacity(rounds);
    let mut cum_loss = 0u64;
    let mut losses = vec![0.0; cover.len()];
    for t in 1..=rounds {
        let (x, y) = adversary.next(class, &history, rng);
        if !(1..=class.m).contains(&x) {
            return Err(LearningError::OutOfDomain { x, m: class.m });
        }
        let expert = match learner {
            Learner::Hedge => hedge.sample_expert(rng),
            Learner::FollowTheLeader => {
                let mut arg = 0;
                for (i, &c) in hedge.cum_losses.iter().enumerate() {
                    if c < hedge.cum_losses[arg] {
                        arg = i;
                    }
                }
                arg
            }
        };
        let prediction = cover.hypotheses[expert].eval(class, x);
        for (l, h) in losses.iter_mut().zip(&cover.hypotheses) {
            *l = if h.eval(class, x) != y { 1.0 } else { 0.0 };
        }
        hedge.step(&losses)?;
        let loss = u8::from(prediction != y);
        cum_loss += loss as u64;
        tracker.add(x, y);
        let best = tracker.best();
        rows.push(LedgerRow { t, x, y, prediction, loss, cum_loss, best, regret: cum_loss as i64 - best as i64 });
        history.push((x, y), prediction);
    }
    Ok(RegretLedger { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RngStream;

    #[test]
    fn class_layout() {
        let c = ThresholdUnionClass::new(16, 2).unwrap();
        assert_eq!(c.block_range(1), (9, 16));
        assert_eq!(c.block_of(8), 0);
        assert_eq!(c.block_of(9), 1);
        assert_eq!(c.hypotheses().len(), 64);
        assert!(ThresholdUnionClass::new(10, 3).is_err());
    }

    #[test]
    fn projection_cells() {
        assert_eq!(project(0.0, 8), 1);
        assert_eq!(project(0.124, 8), 1);
        assert_eq!(project(0.125, 8), 2);
        assert_eq!(project(1.0, 8), 8);
    }

    #[test]
    fn littlestone_values() {
        let ld = |m, d| littlestone_dim(&ThresholdUnionClass::new(m, d).unwrap()).unwrap();
        assert_eq!(ld(2, 1), 1);
        assert_eq!(ld(64, 2), 10);
        assert_eq!(ld(64, 4), 16);
        assert!(littlestone_dim(&ThresholdUnionClass::new(12, 2).unwrap()).is_err());
    }

    #[test]
    fn cover_examples() {
        let c = ThresholdUnionClass::new(16, 2).unwrap();
        let g = build_cover(&c, 0.25).unwrap();
        assert_eq!(g.spacing, 2);
        assert_eq!(g.len(), 16);
        assert!(g.max_distance(&c) <= 0.25);

        let c = ThresholdUnionClass::new(64, 1).unwrap();
        let g = build_cover(&c, 0.125).unwrap();
        assert_eq!(g.len(), 8);
        assert!(g.max_distance(&c) <= 0.125);

        let g = build_cover(&c, 1.0).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn cover_rejects_tiny_beta() {
        let c = ThresholdUnionClass::new(64, 2).unwrap();
        let err = build_cover(&c, 0.01).unwrap_err();
        assert!(matches!(err, LearningError::BetaTooSmall { .. }));
        let g = build_cover_clamped(&c, 0.01).unwrap();
        assert!(g.clamped);
        assert_eq!(g.len(), 1024);
        assert_eq!(g.max_distance(&c), 0.0);
    }

    #[test]
    fn hedge_zero_eta_is_static() {
        let mut h = HedgeState::with_eta(3, 0.0);
        for _ in 0..10 {
            h.step(&[1.0, 0.0, 1.0]).unwrap();
        }
        for p in h.distribution() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hedge_weight_concentrates_monotonically() {
        let mut h = HedgeState::new(4, 100);
        let mut last = 0.25;
        for _ in 0..100 {
            h.step(&[0.0, 1.0, 1.0, 1.0]).unwrap();
            let p = h.distribution()[0];
            assert!(p >= last);
            last = p;
        }
        assert!(last > 0.99);
        let s: f64 = h.distribution().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn best_in_hindsight_small_cases() {
        let c = ThresholdUnionClass::new(8, 2).unwrap();
        let (h, k) = best_in_hindsight(&c, &[(3, true)]);
        assert_eq!(k, 0);
        assert!(h.eval(&c, 3));
        let target = Hypothesis { gamma: vec![3, 7] };
        let tr: Vec<_> = (1..=8).map(|x| (x, target.eval(&c, x))).collect();
        assert_eq!(best_in_hindsight(&c, &tr), (target, 0));
    }

    #[test]
    fn net_error_trivial_cases() {
        let c = ThresholdUnionClass::new(16, 2).unwrap();
        let full = build_cover(&c, 1.0 / 8.0).unwrap();
        assert_eq!(full.spacing, 1);
        assert_eq!(net_error(&c, &full, &[1, 5, 9, 9, 16]), 0);
        let g = build_cover(&c, 0.25).unwrap();
        assert_eq!(net_error(&c, &g, &[]), 0);
    }

    #[test]
    fn mistake_tree_descends_within_depth() {
        let c = ThresholdUnionClass::new(64, 2).unwrap();
        let mut adv = MistakeTreeAdversary::new(&c, 400).unwrap();
        let mut hist = GameHistory::new();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..400 {
            let (x, y) = adv.next(&c, &hist, &mut rng);
            hist.push((x, y), false);
        }
        // The last epoch has not been closed: one block has 2 thresholds left.
        let mut counts: Vec<usize> = adv.active().iter().map(|a| a.1).collect();
        counts.sort();
        assert_eq!(counts, vec![1, 2]);
    }

    #[test]
    fn ledger_identity_and_realizable_game() {
        let c = ThresholdUnionClass::new(32, 2).unwrap();
        let cover = build_cover(&c, 0.25).unwrap();
        let mut rng = RngStream::new(7, 0);
        let target = cover.hypotheses[5].clone();
        let mut adv = SmoothLabelAdversary::Stationary { target, noise: 0.0 };
        let ledger = run_learning_game(Learner::Hedge, &mut adv, &c, &cover, 2000, &mut rng).unwrap();
        assert_eq!(ledger.best(), 0);
        for r in &ledger.rows {
            assert_eq!(r.regret, r.cum_loss as i64 - r.best as i64);
        }
        assert!((ledger.regret() as f64) < 0.1 * 2000.0);
        let (_, best) = best_in_hindsight(&c, &ledger.transcript());
        assert_eq!(best, ledger.best());
    }
}
