//! Finite-domain smooth distributions, their constructive decomposition into
//! uniforms on large sets, seeded random streams and the adversary history.
//!
//! Elements of a [`FiniteDomain`] of size `n` are the indices `1..=n`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pointwise tolerance on masses.
pub const MASS_TOL: f64 = 1e-12;
/// Aggregate tolerance (sums, L1 distances).
pub const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("domain must contain at least one element")]
    EmptyDomain,
    #[error("smoothness parameter must lie in (0, 1], got {0}")]
    InvalidSigma(f64),
    #[error("mass at element {index} is {value}; masses must be finite and nonnegative")]
    InvalidMass { index: usize, value: f64 },
    #[error("pmf has {got} entries but the domain has {expected} elements")]
    LengthMismatch { expected: usize, got: usize },
    #[error("pmf sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("pmf is not smooth: max mass {max} exceeds 1/(sigma n) = {cap}")]
    NotSmooth { max: f64, cap: f64 },
    #[error("set must be nonempty with distinct elements in 1..={n}")]
    InvalidSet { n: usize },
    #[error("set of size {size} is below the floor {floor}")]
    SetTooSmall { size: usize, floor: usize },
    #[error("mixture weights must be positive and sum to 1 (sum {0})")]
    InvalidMixture(f64),
    #[error(
        "max mass {max} exceeds 1/{set_size}; no mixture of uniforms on sets of size >= {set_size} \
         reproduces this pmf"
    )]
    Undecomposable { max: f64, set_size: usize },
}

/// The domain `[n] = {1, ..., n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiniteDomain {
    n: usize,
}

impl FiniteDomain {
    pub fn new(n: usize) -> Result<Self, DomainError> {
        if n == 0 {
            return Err(DomainError::EmptyDomain);
        }
        Ok(FiniteDomain { n })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Smallest admissible set size `⌈σn⌉` for a σ-smooth uniform component.
    ///
    /// The product `σn` is rounded with a small slack so that e.g. `0.1 * 10`
    /// yields 1 and not 2.
    pub fn min_set_size(&self, sigma: f64) -> usize {
        ((sigma * self.n as f64) - SUM_TOL).ceil().max(1.0) as usize
    }

    pub fn contains(&self, x: usize) -> bool {
        (1..=self.n).contains(&x)
    }
}

fn check_sigma(sigma: f64) -> Result<(), DomainError> {
    if sigma.is_finite() && sigma > 0.0 && sigma <= 1.0 {
        Ok(())
    } else {
        Err(DomainError::InvalidSigma(sigma))
    }
}

/// Checks σ-smoothness of a probability vector on `[pmf.len()]`.
///
/// Returns `Ok(false)` for a well-formed vector that is not a σ-smooth pmf and
/// `Err` for malformed input (negative or non-finite entries, bad σ).
pub fn validate_smooth(pmf: &[f64], sigma: f64) -> Result<bool, DomainError> {
    check_sigma(sigma)?;
    if pmf.is_empty() {
        return Err(DomainError::EmptyDomain);
    }
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(DomainError::InvalidMass { index: i + 1, value: p });
        }
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Ok(false);
    }
    let cap = 1.0 / (sigma * pmf.len() as f64);
    let max = pmf.iter().cloned().fold(0.0, f64::max);
    Ok(max <= cap + MASS_TOL)
}

/// A σ-smooth probability mass function on a finite domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SmoothPmfRepr", into = "SmoothPmfRepr")]
pub struct SmoothPmf {
    domain: FiniteDomain,
    mass: Vec<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct SmoothPmfRepr {
    n: usize,
    sigma: f64,
    mass: Vec<f64>,
}

impl TryFrom<SmoothPmfRepr> for SmoothPmf {
    type Error = DomainError;

    fn try_from(r: SmoothPmfRepr) -> Result<Self, Self::Error> {
        if r.mass.len() != r.n {
            return Err(DomainError::LengthMismatch { expected: r.n, got: r.mass.len() });
        }
        SmoothPmf::new(r.mass, r.sigma)
    }
}

impl From<SmoothPmf> for SmoothPmfRepr {
    fn from(p: SmoothPmf) -> Self {
        SmoothPmfRepr { n: p.domain.n, sigma: p.sigma, mass: p.mass }
    }
}

impl SmoothPmf {
    pub fn new(mass: Vec<f64>, sigma: f64) -> Result<Self, DomainError> {
        if !validate_smooth(&mass, sigma)? {
            let sum: f64 = mass.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(DomainError::NotNormalized(sum));
            }
            let cap = 1.0 / (sigma * mass.len() as f64);
            let max = mass.iter().cloned().fold(0.0, f64::max);
            return Err(DomainError::NotSmooth { max, cap });
        }
        Ok(SmoothPmf { domain: FiniteDomain::new(mass.len())?, mass, sigma })
    }

    pub fn uniform(domain: FiniteDomain) -> Self {
        let n = domain.size();
        SmoothPmf { domain, mass: vec![1.0 / n as f64; n], sigma: 1.0 }
    }

    pub fn domain(&self) -> FiniteDomain {
        self.domain
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Probability of element `x` (1-based).
    pub fn prob(&self, x: usize) -> f64 {
        if self.domain.contains(x) {
            self.mass[x - 1]
        } else {
            0.0
        }
    }
}

/// Uniform distribution on a nonempty subset of the domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformOnSet {
    domain: FiniteDomain,
    set: Vec<usize>,
}

impl UniformOnSet {
    /// Builds the uniform distribution on `set`; the input is sorted, and
    /// duplicates or out-of-range elements are rejected.
    pub fn new(domain: FiniteDomain, mut set: Vec<usize>) -> Result<Self, DomainError> {
        set.sort_unstable();
        let distinct = set.windows(2).all(|w| w[0] != w[1]);
        if set.is_empty() || !distinct || !set.iter().all(|&x| domain.contains(x)) {
            return Err(DomainError::InvalidSet { n: domain.size() });
        }
        Ok(UniformOnSet { domain, set })
    }

    pub fn full(domain: FiniteDomain) -> Self {
        UniformOnSet { domain, set: (1..=domain.size()).collect() }
    }

    pub fn domain(&self) -> FiniteDomain {
        self.domain
    }

    pub fn elements(&self) -> &[usize] {
        &self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.set.binary_search(&x).is_ok()
    }

    /// The smoothness `|S| / n` of this distribution.
    pub fn sigma(&self) -> f64 {
        self.set.len() as f64 / self.domain.size() as f64
    }

    pub fn to_pmf(&self) -> Vec<f64> {
        let mut pmf = vec![0.0; self.domain.size()];
        let p = 1.0 / self.set.len() as f64;
        for &x in &self.set {
            pmf[x - 1] = p;
        }
        pmf
    }
}

/// A finite mixture of uniform distributions on sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfUniforms {
    components: Vec<(f64, UniformOnSet)>,
}

impl MixtureOfUniforms {
    pub fn new(components: Vec<(f64, UniformOnSet)>) -> Result<Self, DomainError> {
        let sum: f64 = components.iter().map(|(w, _)| w).sum();
        let positive = components.iter().all(|(w, _)| *w > 0.0 && w.is_finite());
        let same_domain = components.windows(2).all(|c| c[0].1.domain == c[1].1.domain);
        if components.is_empty() || !positive || !same_domain || (sum - 1.0).abs() > SUM_TOL {
            return Err(DomainError::InvalidMixture(sum));
        }
        Ok(MixtureOfUniforms { components })
    }

    pub fn components(&self) -> &[(f64, UniformOnSet)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn domain(&self) -> FiniteDomain {
        self.components[0].1.domain
    }

    /// Reassembles the pmf `Σ w · 1_S / |S|`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut pmf = vec![0.0; self.domain().size()];
        for (w, s) in &self.components {
            let p = w / s.len() as f64;
            for &x in s.elements() {
                pmf[x - 1] += p;
            }
        }
        pmf
    }

    /// Draws a component set according to the mixture weights.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> &UniformOnSet {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, s) in &self.components {
            acc += w;
            if u < acc {
                return s;
            }
        }
        &self.components[self.components.len() - 1].1
    }
}

/// Writes a σ-smooth pmf as a mixture of uniforms on sets of size `⌈σn⌉`.
///
/// Greedy peeling: each step takes the `K = ⌈σn⌉` largest residual masses
/// (ties to the smallest index) and removes the largest uniform layer that
/// keeps the residual nonnegative and keeps every residual mass at most
/// `R/K` (`R` the remaining total). The second condition is what makes the
/// rest decomposable, and each step zeroes an element or pins a new one to
/// the `R/K` cap, so the loop ends after at most `2n` steps.
///
/// When `σn` is not an integer some σ-smooth pmfs put more than `1/K` on an
/// element; those cannot be written with sets of size `K` and are rejected
/// with [`DomainError::Undecomposable`].
pub fn decompose_smooth(pmf: &SmoothPmf) -> Result<MixtureOfUniforms, DomainError> {
    let domain = pmf.domain();
    let n = domain.size();
    let k = domain.min_set_size(pmf.sigma());
    let total: f64 = pmf.mass().iter().sum();
    let max = pmf.mass().iter().cloned().fold(0.0, f64::max);
    if max > total / k as f64 + MASS_TOL {
        return Err(DomainError::Undecomposable { max, set_size: k });
    }

    let mut residual = pmf.mass().to_vec();
    let mut remaining = total;
    let mut components: Vec<(f64, UniformOnSet)> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..(2 * n + 2) {
        if remaining < MASS_TOL {
            break;
        }
        order.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
        let min_in = residual[order[k - 1]];
        let max_out = if k < n { residual[order[k]] } else { 0.0 };
        let layer = (k as f64 * min_in).min(remaining - k as f64 * max_out);
        if layer <= MASS_TOL {
            break;
        }
        let step = layer / k as f64;
        for &i in &order[..k] {
            residual[i] -= step;
            if residual[i] < MASS_TOL {
                residual[i] = 0.0;
            }
        }
        remaining = residual.iter().sum();
        let set = UniformOnSet::new(domain, order[..k].iter().map(|i| i + 1).collect())?;
        components.push((layer, set));
    }

    let weight_sum: f64 = components.iter().map(|(w, _)| w).sum();
    for (w, _) in &mut components {
        *w /= weight_sum;
    }
    MixtureOfUniforms::new(components)
}

/// L1 distance between two vectors of equal length.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Distributions over a finite domain that can be sampled.
pub trait SampleElement {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize;
}

impl SampleElement for UniformOnSet {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.set[rng.random_range(0..self.set.len())]
    }
}

impl SampleElement for SmoothPmf {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 1;
        for (i, &p) in self.mass.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i + 1;
                if u < acc {
                    return i + 1;
                }
            }
        }
        last
    }
}

impl SampleElement for MixtureOfUniforms {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_component(rng).sample(rng)
    }
}

/// Draws an element from a distribution; see [`SampleElement`].
pub fn sample<D: SampleElement, R: Rng + ?Sized>(dist: &D, rng: &mut R) -> usize {
    dist.sample(rng)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped to the cipher's stream
/// counter, so distinct ids give non-overlapping keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// An independent stream keyed by `tag`, used to separate e.g. the
    /// probe pool of a run from its adversary draws.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag)), self.stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Realized values and algorithm decisions observed before the current round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History<V, D> {
    pub values: Vec<V>,
    pub decisions: Vec<D>,
}

impl<V, D> Default for History<V, D> {
    fn default() -> Self {
        History { values: Vec::new(), decisions: Vec::new() }
    }
}

impl<V, D> History<V, D> {
    pub fn new() -> Self {
        Self::default()
    }

    /// 1-based index of the round about to be played.
    pub fn round(&self) -> usize {
        self.values.len() + 1
    }

    pub fn push(&mut self, value: V, decision: D) {
        self.values.push(value);
        self.decisions.push(decision);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
