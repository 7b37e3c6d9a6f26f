mod common;

use proptest::prelude::*;
use rand::Rng;

use smoothlab::coupling::{
    couple_adaptive, couple_general, couple_single_round, CouplingConfig, CouplingTrace, FnPmfAdversary,
    FnSetAdversary, FullSet, SlidingWindow, StationaryPmf,
};
use smoothlab::domain::l1_distance;
use smoothlab::stats::{binomial_stderr, chi_square_gof};
use smoothlab::{decompose_smooth, sample, validate_smooth, FiniteDomain, RngStream, SmoothPmf, UniformOnSet};

fn smooth_case() -> impl Strategy<Value = (usize, f64, u64)> {
    (prop::sample::select(vec![2usize, 4, 8, 16, 64]), prop::sample::select(vec![1.0, 0.5, 0.25]), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decomposition_reconstructs((n, sigma, seed) in smooth_case()) {
        let mut rng = RngStream::new(seed, 0);
        let p = common::random_smooth_pmf(n, sigma, &mut rng);
        let pmf = SmoothPmf::new(p.clone(), sigma).unwrap();
        let mix = decompose_smooth(&pmf).unwrap();
        prop_assert!(l1_distance(&mix.reconstruct(), &p) <= 1e-9);
        let floor = FiniteDomain::new(n).unwrap().min_set_size(sigma);
        prop_assert!(mix.components().iter().all(|(w, s)| *w > 0.0 && s.len() >= floor));
        let total: f64 = mix.components().iter().map(|(w, _)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn pmf_json_roundtrip((n, sigma, seed) in smooth_case()) {
        let mut rng = RngStream::new(seed, 1);
        let pmf = SmoothPmf::new(common::random_smooth_pmf(n, sigma, &mut rng), sigma).unwrap();
        let text = serde_json::to_string(&pmf).unwrap();
        let back: SmoothPmf = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, pmf);
    }

    #[test]
    fn single_round_x_in_set_and_z_in_domain(seed in any::<u64>(), k in 1usize..20, size in 1usize..8) {
        let domain = FiniteDomain::new(8).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let set: Vec<usize> = (1..=size).collect();
        let set = UniformOnSet::new(domain, set).unwrap();
        for _ in 0..20 {
            let (x, z) = couple_single_round(&set, k, &mut rng);
            prop_assert!(set.contains(x));
            prop_assert_eq!(z.len(), k);
            prop_assert!(z.iter().all(|&v| (1..=8).contains(&v)));
        }
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let a: Vec<u64> = { let mut r = RngStream::new(seed, stream); (0..8).map(|_| r.random()).collect() };
        let b: Vec<u64> = { let mut r = RngStream::new(seed, stream); (0..8).map(|_| r.random()).collect() };
        prop_assert_eq!(a, b);
    }
}

#[test]
fn validate_smooth_cases() {
    assert!(validate_smooth(&[0.25; 4], 1.0).unwrap());
    assert!(validate_smooth(&[0.5, 0.5, 0.0, 0.0], 0.5).unwrap());
    assert!(!validate_smooth(&[0.7, 0.3, 0.0, 0.0], 0.5).unwrap());
    assert!(!validate_smooth(&[0.5, 0.6], 1.0).unwrap());
    assert!(validate_smooth(&[1.2, -0.2], 1.0).is_err());
}

#[test]
fn sampling_frequencies_match_pmf() {
    let pmf = SmoothPmf::new(vec![0.1, 0.2, 0.3, 0.4], 0.5).unwrap();
    let mut rng = RngStream::new(5, 0);
    let mut counts = vec![0u64; 4];
    for _ in 0..40_000 {
        counts[sample(&pmf, &mut rng) - 1] += 1;
    }
    assert!(chi_square_gof(&counts, pmf.mass()).p_value > 0.001);
}

#[test]
fn full_set_always_contains() {
    let domain = FiniteDomain::new(5).unwrap();
    let cfg = CouplingConfig::new(1, 6).unwrap();
    let mut rng = RngStream::new(2, 0);
    for _ in 0..200 {
        assert!(couple_adaptive(&FullSet, domain, cfg, &mut rng).unwrap().contained);
    }
}

#[test]
fn undersized_set_rejected() {
    let domain = FiniteDomain::new(8).unwrap();
    let adv = FnSetAdversary { sigma: 0.5, rule: |d: FiniteDomain, _h: &[usize]| UniformOnSet::new(d, vec![1]).unwrap() };
    let cfg = CouplingConfig::new(4, 2).unwrap();
    assert!(couple_adaptive(&adv, domain, cfg, &mut RngStream::new(0, 0)).is_err());
}

#[test]
fn enumeration_example_value() {
    let f = common::enumerate_failure(2, 2, 2, &|h: &[usize]| vec![h.last().copied().unwrap_or(1)]);
    assert!((f - 0.4375).abs() < 1e-15);
}

#[test]
fn sliding_window_matches_enumeration() {
    let (n, rounds, k) = (4, 3, 2);
    let sigma = 0.5;
    let rule = |h: &[usize]| -> Vec<usize> {
        let start = h.last().copied().unwrap_or(1) - 1;
        (0..2).map(|o| (start + o) % n + 1).collect()
    };
    let exact = common::enumerate_failure(n, rounds, k, &rule);
    let domain = FiniteDomain::new(n).unwrap();
    let cfg = CouplingConfig::new(k, rounds).unwrap();
    let runs = 40_000;
    let mut rng = RngStream::new(9, 0);
    let fails = (0..runs)
        .filter(|_| !couple_adaptive(&SlidingWindow { sigma }, domain, cfg, &mut rng).unwrap().contained)
        .count();
    let mc = fails as f64 / runs as f64;
    assert!((mc - exact).abs() <= 3.0 * binomial_stderr(exact, runs as u64), "{mc} vs {exact}");
}

#[test]
fn general_pmf_coupling_draws_from_pmf() {
    let domain = FiniteDomain::new(4).unwrap();
    let pmf = SmoothPmf::new(vec![0.5, 0.3, 0.2, 0.0], 0.5).unwrap();
    let adv = StationaryPmf(pmf.clone());
    let cfg = CouplingConfig::new(6, 1).unwrap();
    let mut rng = RngStream::new(4, 0);
    let mut counts = vec![0u64; 4];
    for _ in 0..30_000 {
        counts[couple_general(&adv, domain, cfg, &mut rng).unwrap().x[0] - 1] += 1;
    }
    assert_eq!(counts[3], 0);
    assert!(chi_square_gof(&counts, pmf.mass()).p_value > 0.001);
}

#[test]
fn general_coupling_rejects_rough_pmf() {
    let domain = FiniteDomain::new(4).unwrap();
    let adv = FnPmfAdversary {
        sigma: 1.0,
        rule: |_d: FiniteDomain, _h: &[usize]| SmoothPmf::new(vec![0.7, 0.1, 0.1, 0.1], 0.25).unwrap(),
    };
    let cfg = CouplingConfig::new(2, 1).unwrap();
    assert!(couple_general(&adv, domain, cfg, &mut RngStream::new(0, 0)).is_err());
}

#[test]
fn trace_json_detects_tampering() {
    let trace = CouplingTrace::from_parts(vec![2, 1], vec![vec![2, 3], vec![3, 3]]);
    assert!(!trace.contained);
    let text = serde_json::to_string(&trace).unwrap();
    assert!(text.contains("\"X\":[2,1]"));
    let back: CouplingTrace = serde_json::from_str(&text).unwrap();
    assert_eq!(back, trace);
    let forged = text.replace("\"contained\":false", "\"contained\":true");
    assert!(serde_json::from_str::<CouplingTrace>(&forged).is_err());
}
