//! Dispersion of discontinuities drawn by adaptive interval-smooth adversaries.
//!
//! Each of `T` piecewise-Lipschitz functions has `ℓ` discontinuities in
//! `[0, 1]`. Step `(i, j)` draws its location uniformly from an interval of
//! width at least σ chosen after seeing every earlier location.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the σ floor for emitted interval widths.
const WIDTH_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("sigma must lie in (0, 1], got {0}")]
    InvalidSigma(f64),
    #[error("step ({i}, {j}): interval [{a}, {b}] is narrower than sigma = {sigma} or leaves [0, 1]")]
    BadInterval { i: usize, j: usize, a: f64, b: f64, sigma: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed sample: {0}")]
    Malformed(String),
}

/// One discontinuity: function `i` (1-based), index `j` (1-based), location `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discontinuity {
    pub i: usize,
    pub j: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuitySample {
    pub points: Vec<Discontinuity>,
    pub functions: usize,
    pub per_function: usize,
    pub sigma: f64,
    pub adversary: String,
    pub seed: u64,
}

impl DiscontinuitySample {
    pub fn locations(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    /// Writes one `{"i", "j", "x"}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for p in &self.points {
            serde_json::to_writer(&mut w, p)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Discontinuity>, DispersionError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| DispersionError::Malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DispersionError::Malformed(e.to_string()))?);
    }
    Ok(out)
}

/// Picks the interval for the next draw from the locations so far.
pub trait IntervalAdversary: Sync {
    fn next_interval(&self, history: &[Discontinuity], sigma: f64) -> (f64, f64);
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntervalAdversaryKind {
    /// `[0, 1]` every step.
    Uniform,
    /// `[start, start + σ]` every step.
    Fixed { start: f64 },
    /// Width-σ interval centered on the densest closed width-`w` window of
    /// the history (leftmost on ties), shifted to stay inside `[0, 1]`;
    /// `[0, σ]` on an empty history.
    DensestWindow { w: f64 },
}

impl IntervalAdversary for IntervalAdversaryKind {
    fn next_interval(&self, history: &[Discontinuity], sigma: f64) -> (f64, f64) {
        match *self {
            IntervalAdversaryKind::Uniform => (0.0, 1.0),
            IntervalAdversaryKind::Fixed { start } => {
                let a = start.clamp(0.0, 1.0 - sigma);
                (a, a + sigma)
            }
            IntervalAdversaryKind::DensestWindow { w } => {
                if history.is_empty() {
                    return (0.0, sigma);
                }
                let mut xs: Vec<f64> = history.iter().map(|p| p.x).collect();
                xs.sort_by(f64::total_cmp);
                let mut best = (0usize, xs[0]);
                let mut p = 0;
                for a in 0..xs.len() {
                    while p < xs.len() && xs[p] - xs[a] <= w {
                        p += 1;
                    }
                    if p - a > best.0 {
                        best = (p - a, xs[a]);
                    }
                }
                let centre = best.1 + w / 2.0;
                let a = (centre - sigma / 2.0).clamp(0.0, 1.0 - sigma);
                (a, a + sigma)
            }
        }
    }

    fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Draws `functions × per_function` locations in order `(1,1), (1,2), …`.
pub fn generate_discontinuities(
    adversary: &dyn IntervalAdversary,
    functions: usize,
    per_function: usize,
    sigma: f64,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<DiscontinuitySample, DispersionError> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(DispersionError::InvalidSigma(sigma));
    }
    let mut points = Vec::with_capacity(functions * per_function);
    for i in 1..=functions {
        for j in 1..=per_function {
            let (a, b) = adversary.next_interval(&points, sigma);
            if !(a >= 0.0 && b <= 1.0 && b - a >= sigma - WIDTH_TOL) {
                return Err(DispersionError::BadInterval { i, j, a, b, sigma });
            }
            let x = a + (b - a) * rng.random::<f64>();
            points.push(Discontinuity { i, j, x });
        }
    }
    Ok(DiscontinuitySample {
        points,
        functions,
        per_function,
        sigma,
        adversary: adversary.describe(),
        seed,
    })
}

/// `(total, split)`: the most points in a closed window of width `w`, and the
/// most distinct functions with a discontinuity strictly inside an open
/// window of width `w`.
///
/// Both maxima are attained with the window's left end at a point: closed
/// windows `[x_a, x_a + w]` for the total, and `[x_a, x_a + w)` (the limit of
/// open windows slid just left of `x_a`) for the split count.
pub fn max_interval_count(points: &[Discontinuity], w: f64) -> (usize, usize) {
    let mut pts: Vec<(f64, usize)> = points.iter().map(|p| (p.x, p.i)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let mut total = 0;
    let mut p = 0;
    for a in 0..n {
        while p < n && pts[p].0 - pts[a].0 <= w {
            p += 1;
        }
        total = total.max(p - a);
    }
    let mut split = 0;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut q = 0;
    for a in 0..n {
        if q < a {
            q = a;
        }
        while q < n && pts[q].0 - pts[a].0 < w {
            *counts.entry(pts[q].1).or_insert(0) += 1;
            q += 1;
        }
        split = split.max(counts.len());
        if q > a {
            let c = counts.get_mut(&pts[a].1).expect("counted");
            *c -= 1;
            if *c == 0 {
                counts.remove(&pts[a].1);
            }
        }
    }
    (total, split)
}

/// High-probability cap on the points of an adaptive σ-smooth `Tℓ`-step
/// sequence falling in any interval of width `w`:
///
/// `A·L + 10·√(A·L·ln(1/δ)) + 10·ln(10·Tℓ·L/(σδ))`, where `A = Tℓw/σ` and
/// `L = ln(2Tℓ/δ)`.
pub fn dispersion_bound(functions: usize, per_function: usize, sigma: f64, w: f64, delta: f64) -> f64 {
    let tl = (functions * per_function) as f64;
    let a = tl * w / sigma;
    let l = (2.0 * tl / delta).ln();
    a * l + 10.0 * (a * l * (1.0 / delta).ln()).sqrt() + 10.0 * (10.0 * tl * l / (sigma * delta)).ln()
}

/// Window `w = σ (Tℓ)^{α−1}` and `k = ⌈dispersion_bound⌉` at that window.
pub fn default_parameters(
    functions: usize,
    per_function: usize,
    sigma: f64,
    alpha: f64,
    delta: f64,
) -> Result<(f64, usize), DispersionError> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(DispersionError::InvalidParameter(format!("alpha must lie in [0.5, 1], got {alpha}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DispersionError::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let tl = (functions * per_function) as f64;
    let w = sigma * tl.powf(alpha - 1.0);
    Ok((w, dispersion_bound(functions, per_function, sigma, w, delta).ceil() as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub w: f64,
    pub k: usize,
    pub total: usize,
    pub split: usize,
    pub bound: f64,
    /// `split ≤ k`.
    pub pass: bool,
    pub default_w: f64,
    pub default_k: usize,
}

impl DispersionReport {
    pub const CSV_HEADER: &'static str = "w,total,split,bound,pass";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{},{},{},{},{}", self.w, self.total, self.split, self.bound, u8::from(self.pass))
    }
}

/// Checks `(w, k)`-dispersion of the sample and reports both counts, the
/// bound at `(w, δ)` and the default `(w, k)` for `α`.
pub fn check_dispersed(
    sample: &DiscontinuitySample,
    w: f64,
    k: usize,
    alpha: f64,
    delta: f64,
) -> Result<DispersionReport, DispersionError> {
    if w.is_nan() || w <= 0.0 {
        return Err(DispersionError::InvalidParameter(format!("w must be positive, got {w}")));
    }
    let (total, split) = max_interval_count(&sample.points, w);
    let (default_w, default_k) =
        default_parameters(sample.functions, sample.per_function, sample.sigma, alpha, delta)?;
    Ok(DispersionReport {
        w,
        k,
        total,
        split,
        bound: dispersion_bound(sample.functions, sample.per_function, sample.sigma, w, delta),
        pass: split <= k,
        default_w,
        default_k,
    })
}

/// Piecewise-constant function jumping by one at each discontinuity: the
/// number of breaks at or left of `x`. Used only for plotting.
pub fn piecewise_constant(breaks: &[f64], x: f64) -> f64 {
    breaks.iter().filter(|&&b| b <= x).count() as f64
}
