//! Statistical tests and summaries shared by the experiment modules.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Result of a chi-square test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

fn chi_square_sf(statistic: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
}

/// Goodness of fit of observed counts against cell probabilities.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquare {
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            continue;
        }
        let e = n * p;
        statistic += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1) as f64;
    ChiSquare { statistic, dof, p_value: chi_square_sf(statistic, dof) }
}

/// Goodness of fit against the uniform distribution on the cells.
pub fn chi_square_uniform(observed: &[u64]) -> ChiSquare {
    let k = observed.len();
    chi_square_gof(observed, &vec![1.0 / k as f64; k])
}

/// Pearson test of independence (equivalently homogeneity) for an `r × c`
/// contingency table given row-major. Empty rows and columns are dropped.
pub fn chi_square_independence(table: &[Vec<u64>]) -> ChiSquare {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return ChiSquare { statistic: 0.0, dof: 0.0, p_value: 1.0 };
    }
    let ncols = rows[0].len();
    let col_tot: Vec<u64> = (0..ncols).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let cols: Vec<usize> = (0..ncols).filter(|&j| col_tot[j] > 0).collect();
    let total: u64 = col_tot.iter().sum();
    let mut statistic = 0.0;
    for r in &rows {
        let rt: u64 = r.iter().sum();
        for &j in &cols {
            let e = rt as f64 * col_tot[j] as f64 / total as f64;
            statistic += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let dof = ((rows.len() - 1) * cols.len().saturating_sub(1)) as f64;
    ChiSquare { statistic, dof, p_value: chi_square_sf(statistic, dof) }
}

/// One-sample Kolmogorov–Smirnov test against Uniform[0, 1].
///
/// Returns `(D, p)` with the asymptotic Kolmogorov distribution and the
/// Stephens small-sample correction.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_sf(lambda))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Standard error `√(p(1-p)/n)` of a binomial proportion.
pub fn binomial_stderr(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// A proportion with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson_interval(successes: u64, trials: u64) -> RateSummary {
    if trials == 0 {
        return RateSummary { successes, trials, rate: 0.0, ci_low: 0.0, ci_high: 1.0 };
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    RateSummary {
        successes,
        trials,
        rate: p,
        ci_low: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        ci_high: if successes == trials { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Median of a sample (mean of the two central order statistics for even
/// sizes). NaN for an empty sample.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Location and spread of one metric across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        let m = mean(values);
        let std = if count > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        MetricSummary {
            count,
            mean: m,
            std,
            median: median(values),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Ratio of medians `median(a) / median(b)` with a percentile bootstrap
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub median_a: f64,
    pub median_b: f64,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

pub fn bootstrap_median_ratio<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    rng: &mut R,
) -> RatioEstimate {
    let median_a = median(a);
    let median_b = median(b);
    let ratio = if a == b { 1.0 } else { median_a / median_b };
    let mut ratios = Vec::with_capacity(resamples);
    let mut buf_a = vec![0.0; a.len()];
    let mut buf_b = vec![0.0; b.len()];
    for _ in 0..resamples {
        for slot in buf_a.iter_mut() {
            *slot = a[rng.random_range(0..a.len())];
        }
        for slot in buf_b.iter_mut() {
            *slot = b[rng.random_range(0..b.len())];
        }
        ratios.push(median(&buf_a) / median(&buf_b));
    }
    ratios.sort_by(f64::total_cmp);
    let q = |p: f64| {
        if ratios.is_empty() {
            return ratio;
        }
        let idx = ((ratios.len() - 1) as f64 * p).round() as usize;
        ratios[idx]
    };
    RatioEstimate { median_a, median_b, ratio, ci_low: q(0.025), ci_high: q(0.975), resamples }
}
