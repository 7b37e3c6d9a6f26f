use proptest::prelude::*;
use smoothlab::discrepancy::{
    check_isotropy, dot, norm2, potential, potential_gap, run_discrepancy, sample_ball, slab_adversary_next,
    slab_rejection_sample, slab_width, tail_probability_check, AdversaryKind, Algorithm, DiscrepancyState,
    Overrides, PotentialConfig, ProbePool, RunHeader, Sign, TailThreshold,
};
use smoothlab::stats::{binomial_stderr, ks_uniform};
use smoothlab::RngStream;

fn vector(n: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn potential_at_least_one_and_even(d in vector(5, 20.0), lambda in 0.0f64..0.5, seed in any::<u64>()) {
        let pool = ProbePool::draw(5, 32, &mut RngStream::new(seed, 0));
        let cfg = PotentialConfig { lambda, pool_size: 32, k: 1 };
        let phi = potential(&d, &cfg, &pool).unwrap();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        prop_assert!(phi >= 1.0);
        prop_assert_eq!(phi, potential(&neg, &cfg, &pool).unwrap());
    }

    #[test]
    fn greedy_sign_never_increases_potential_more_than_alternative(
        d in vector(4, 30.0), seed in any::<u64>(), lambda in 0.001f64..0.2
    ) {
        let mut rng = RngStream::new(seed, 0);
        let pool = ProbePool::draw(4, 64, &mut rng);
        let cfg = PotentialConfig { lambda, pool_size: 64, k: 1 };
        let x = sample_ball(4, &mut rng);
        let gap = potential_gap(&d, &x, &cfg, &pool).unwrap();
        let plus: Vec<f64> = d.iter().zip(&x).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = d.iter().zip(&x).map(|(a, b)| a - b).collect();
        let (pp, pm) = (potential(&plus, &cfg, &pool).unwrap(), potential(&minus, &cfg, &pool).unwrap());
        prop_assert!((gap - (pp - pm)).abs() <= 1e-9 * pp.max(pm));
        let mut state = DiscrepancyState::new(4);
        state.d = d.clone();
        let sign = smoothlab::discrepancy::choose_sign_potential(&state, &x, &cfg, &pool).unwrap();
        let chosen = if sign == Sign::Plus { pp } else { pm };
        prop_assert!(chosen <= pp.min(pm) + 1e-12 * pp.max(pm));
    }

    #[test]
    fn slab_draws_satisfy_constraints(d in vector(4, 10.0), seed in any::<u64>(), horizon in 1usize..200) {
        prop_assume!(norm2(&d) > 1e-6);
        let mut rng = RngStream::new(seed, 0);
        let tau = slab_width(4, horizon);
        for _ in 0..50 {
            let v = slab_adversary_next(&d, 4, horizon, &mut rng);
            prop_assert!(norm2(&v) <= 1.0);
            prop_assert!(dot(&v, &d).abs() <= tau * norm2(&d));
        }
    }
}

fn slab_cdf(s: f64, tau: f64) -> f64 {
    // n = 3: density ∝ 1 − s² on [−τ, τ].
    let g = |u: f64| 3.0 * u - u * u * u;
    (g(s) + g(tau)) / (2.0 * g(tau))
}

#[test]
fn exact_and_rejection_slab_samplers_agree_with_marginal() {
    let (n, horizon) = (3, 2);
    let tau = slab_width(n, horizon);
    let d = vec![0.3, -1.0, 2.0];
    let dn = norm2(&d);
    let unit: Vec<f64> = d.iter().map(|v| v / dn).collect();
    let mut rng = RngStream::new(21, 0);
    let coords = |v: &[f64]| {
        let s = dot(v, &unit);
        let orth2 = dot(v, v) - s * s;
        (slab_cdf(s, tau), orth2 / (1.0 - s * s))
    };
    let mut exact_s = Vec::new();
    let mut exact_r = Vec::new();
    let mut rej_s = Vec::new();
    let mut rej_r = Vec::new();
    let mut proposals = 0u64;
    for _ in 0..4000 {
        let (a, b) = coords(&slab_adversary_next(&d, n, horizon, &mut rng));
        exact_s.push(a);
        exact_r.push(b);
        let (v, used) = slab_rejection_sample(&d, n, horizon, 1_000_000, &mut rng);
        proposals += used;
        let (a, b) = coords(&v.unwrap());
        rej_s.push(a);
        rej_r.push(b);
    }
    // In the 2-dimensional cross-section, (r/ρ)² is uniform.
    for sample in [&exact_s, &exact_r, &rej_s, &rej_r] {
        assert!(ks_uniform(sample).1 > 0.001);
    }
    // P(|s| ≤ τ) = (3/4)(2τ − 2τ³/3).
    let mass = 0.75 * (2.0 * tau - 2.0 * tau.powi(3) / 3.0);
    let rate = 4000.0 / proposals as f64;
    assert!((rate / mass - 1.0).abs() < 4.0 / 4000f64.sqrt(), "{rate} vs {mass}");
}

#[test]
fn rejection_acceptance_for_thin_slab_matches_density_at_zero() {
    // n = 4: marginal density at 0 is Γ(3)/(√π Γ(5/2)) = 8/(3π).
    let (n, horizon) = (4, 50);
    let tau = slab_width(n, horizon);
    let expected = 2.0 * tau * 8.0 / (3.0 * std::f64::consts::PI);
    let d = vec![1.0, 2.0, -0.5, 0.0];
    let mut rng = RngStream::new(22, 0);
    let mut proposals = 0u64;
    let accepted = 40;
    for _ in 0..accepted {
        let (v, used) = slab_rejection_sample(&d, n, horizon, u64::MAX, &mut rng);
        assert!(v.is_some());
        proposals += used;
    }
    let rate = accepted as f64 / proposals as f64;
    // Geometric waiting times: relative error ≈ 1/√accepted.
    assert!((rate / expected - 1.0).abs() < 4.0 / (accepted as f64).sqrt(), "{rate} vs {expected}");
}

#[test]
fn shells_are_isotropic_slab_is_not() {
    let mut state = DiscrepancyState::new(4);
    state.d = vec![3.0, 0.0, 0.0, 0.0];
    let mut rng = RngStream::new(23, 0);
    for adv in [AdversaryKind::UniformBall, AdversaryKind::Shell { sigma: 0.25 }, AdversaryKind::AdaptiveShell {
        sigma: 0.25,
        grid: 3,
    }] {
        let rep = check_isotropy(&adv, &state, 40_000, &mut rng).unwrap();
        assert!(rep.deviation < 0.02, "{adv:?}: {}", rep.deviation);
    }
    let rep = check_isotropy(&AdversaryKind::Slab { n: 4, horizon: 10 }, &state, 40_000, &mut rng).unwrap();
    assert!(rep.deviation > 0.1, "{}", rep.deviation);
    assert!(check_isotropy(&AdversaryKind::UniformBall, &state, 10, &mut rng).is_err());
}

#[test]
fn potential_runs_stay_below_potential_tail_threshold() {
    let adv = AdversaryKind::Shell { sigma: 0.5 };
    let header = RunHeader::resolve(Algorithm::Potential, &adv, 4, 300, 128, 0.1, Overrides::default()).unwrap();
    let runs: Vec<_> =
        (0..5).map(|i| run_discrepancy(header.clone(), &adv, &mut RngStream::new(24, i)).unwrap()).collect();
    for run in &runs {
        assert!(run.phi_threshold_round.is_none());
        assert!(!run.failed());
        let mean = run.mean_delta_phi().unwrap();
        assert!(mean <= 2.0, "{mean}");
    }
    let th = TailThreshold::PotentialTail { lambda: header.lambda, k: header.k, delta: 0.1, sigma: 0.5 };
    let report = tail_probability_check(&runs, th).unwrap();
    assert!(report.pass);
    assert_eq!(report.exceedances.successes, 0);
}

#[test]
fn tail_check_requires_enough_rounds() {
    let adv = AdversaryKind::UniformBall;
    let header = RunHeader::resolve(Algorithm::RandomSign, &adv, 2, 10, 0, 0.1, Overrides::default()).unwrap();
    let run = run_discrepancy(header, &adv, &mut RngStream::new(0, 0)).unwrap();
    assert!(tail_probability_check(&[run], TailThreshold::Fixed { threshold: 1.0, bound: 0.5 }).is_err());
}

#[test]
fn fixed_threshold_exceedance_rate_is_estimated() {
    // Random signs: |<d, x>| exceeds 1 often; the bound 0 must fail.
    let adv = AdversaryKind::UniformBall;
    let header = RunHeader::resolve(Algorithm::RandomSign, &adv, 3, 500, 0, 0.1, Overrides::default()).unwrap();
    let runs: Vec<_> =
        (0..4).map(|i| run_discrepancy(header.clone(), &adv, &mut RngStream::new(25, i)).unwrap()).collect();
    let rep = tail_probability_check(&runs, TailThreshold::Fixed { threshold: 1.0, bound: 0.0 }).unwrap();
    assert!(rep.exceedances.rate > 0.1);
    assert!(!rep.pass);
}

#[test]
fn self_balancing_signs_follow_bias() {
    // With d fixed and x = e₁, the walk picks +1 with probability ½ − d₁/(2c).
    let walk = smoothlab::discrepancy::SelfBalancingConfig::new(10.0, 0.1).unwrap();
    let mut state = DiscrepancyState::new(2);
    state.d = vec![4.0, 0.0];
    let mut rng = RngStream::new(26, 0);
    let trials = 50_000;
    let plus = (0..trials)
        .filter(|_| {
            smoothlab::discrepancy::choose_sign_selfbalancing(&state, &[1.0, 0.0], &walk, &mut rng)
                == smoothlab::discrepancy::WalkStep::Sign(Sign::Plus)
        })
        .count();
    let p = 0.5 - 4.0 / 20.0;
    let f = plus as f64 / trials as f64;
    assert!((f - p).abs() < 4.0 * binomial_stderr(p, trials as u64));
}
