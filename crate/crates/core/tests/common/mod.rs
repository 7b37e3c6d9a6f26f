//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use smoothlab::dispersion::Discontinuity;
use smoothlab::learning::{CoverGrid, Hypothesis, ThresholdUnionClass};

/// Exact containment-failure probability of the adaptive coupling on a tiny
/// domain, by enumerating every realized prefix.
///
/// Round `j` succeeds exactly when some proposal lands in the adversary's set
/// `S_j`, which happens with probability `1 − (1 − |S_j|/n)^k`; the realized
/// `X_j` is uniform on `S_j` either way.
pub fn enumerate_failure<F>(n: usize, rounds: usize, k: usize, rule: &F) -> f64
where
    F: Fn(&[usize]) -> Vec<usize>,
{
    fn rec<F: Fn(&[usize]) -> Vec<usize>>(n: usize, left: usize, k: usize, prefix: &mut Vec<usize>, rule: &F) -> f64 {
        if left == 0 {
            return 1.0;
        }
        let set = rule(prefix);
        let hit = 1.0 - (1.0 - set.len() as f64 / n as f64).powi(k as i32);
        let mut total = 0.0;
        for &x in &set {
            prefix.push(x);
            total += rec(n, left - 1, k, prefix, rule) / set.len() as f64;
            prefix.pop();
        }
        hit * total
    }
    1.0 - rec(n, rounds, k, &mut Vec::new(), rule)
}

/// Dirichlet(1, …, 1) draw: uniform on the probability simplex.
pub fn uniform_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Uniform draw from the σ-smooth pmfs on `[n]` (the simplex cut by
/// `p_i ≤ 1/(σn)`), by rejection from the simplex. When rejection keeps
/// failing (the cut polytope is a sliver, e.g. σ = 1) the last simplex draw
/// is mixed with the uniform pmf until its largest mass sits on the cap.
pub fn random_smooth_pmf<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let cap = 1.0 / (sigma * n as f64);
    for _ in 0..10_000 {
        let p = uniform_simplex(n, rng);
        if p.iter().all(|&v| v <= cap) {
            return p;
        }
    }
    let p = uniform_simplex(n, rng);
    let top = p.iter().cloned().fold(0.0, f64::max);
    // Largest mixing weight t with t·top + (1 − t)/n ≤ cap.
    let t = ((cap - 1.0 / n as f64) / (top - 1.0 / n as f64)).clamp(0.0, 1.0);
    p.iter().map(|v| t * v + (1.0 - t) / n as f64).collect()
}

/// Mistakes of every hypothesis, evaluated point by point.
pub fn brute_best_in_hindsight(class: &ThresholdUnionClass, transcript: &[(usize, bool)]) -> u64 {
    class
        .hypotheses()
        .iter()
        .map(|h| transcript.iter().filter(|&&(x, y)| brute_eval(class, h, x) != y).count() as u64)
        .min()
        .unwrap_or(0)
}

/// `h(x)` straight from the definition: find the block by scanning.
pub fn brute_eval(class: &ThresholdUnionClass, h: &Hypothesis, x: usize) -> bool {
    for b in 0..class.d() {
        let (lo, hi) = class.block_range(b);
        if (lo..=hi).contains(&x) {
            return x >= h.gamma[b];
        }
    }
    unreachable!("x outside the domain")
}

/// `max_h min_{h'} Σ_t 1(h(x_t) ≠ h'(x_t))` over every pair.
pub fn brute_net_error(class: &ThresholdUnionClass, cover: &CoverGrid, points: &[usize]) -> u64 {
    class
        .hypotheses()
        .iter()
        .map(|h| {
            cover
                .hypotheses
                .iter()
                .map(|g| points.iter().filter(|&&x| brute_eval(class, h, x) != brute_eval(class, g, x)).count() as u64)
                .min()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Window counts by trying every point as the left end and as the right end.
pub fn brute_window_counts(points: &[Discontinuity], w: f64) -> (usize, usize) {
    let mut total = 0;
    let mut split = 0;
    for a in points {
        let left = points.iter().filter(|p| p.x >= a.x && p.x - a.x <= w).count();
        let right = points.iter().filter(|p| p.x <= a.x && a.x - p.x <= w).count();
        total = total.max(left).max(right);
        let mut fns: Vec<usize> = points.iter().filter(|p| p.x >= a.x && p.x - a.x < w).map(|p| p.i).collect();
        fns.sort_unstable();
        fns.dedup();
        split = split.max(fns.len());
    }
    (total, split)
}

/// The dispersion bound written out a second time, as a product under one
/// logarithm where possible.
pub fn dispersion_bound_oracle(t: f64, l: f64, sigma: f64, w: f64, delta: f64) -> f64 {
    let log_term = (2.0 * t * l / delta).ln();
    let mean = t * l * w * log_term / sigma;
    let dev = 10.0 * (mean * (-delta.ln())).sqrt();
    let tail = 10.0 * ((10.0 * t * l * log_term).ln() - (sigma * delta).ln());
    mean + dev + tail
}
