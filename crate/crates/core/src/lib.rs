//! Simulation toolkit for online learning against smoothed adaptive
//! adversaries.
//!
//! * [`domain`]: finite domains, σ-smooth distributions, their decomposition
//!   into uniforms, and seeded random streams.
//! * [`coupling`]: couplings of adaptive smooth sequences with uniform
//!   proposals, plus statistical checks of their marginals.
//! * [`discrepancy`]: online vector balancing (potential rule, self-balancing
//!   walk) against smooth vector adversaries.
//! * [`learning`]: Hedge over a finite cover of a union-of-thresholds class
//!   and the regret ledger.
//! * [`dispersion`]: dispersion of piecewise-Lipschitz discontinuities.
//! * [`harness`]: seeded batch experiments and persisted summaries.

pub mod coupling;
pub mod discrepancy;
pub mod dispersion;
pub mod domain;
pub mod harness;
pub mod learning;
pub mod stats;

pub use domain::{
    decompose_smooth, sample, validate_smooth, DomainError, FiniteDomain, History, MixtureOfUniforms,
    RngStream, SampleElement, SmoothPmf, UniformOnSet,
};
