use bonsai_core::funcnet::FixedPointOptions;
use bonsai_core::kernel::KernelParams;
use bonsai_core::regret::{
    bound_curve, chain_problem, regret_inequality_check, mean_average_regret, mig_greedy, mig_sum, nominal_ts_run, probe_boxes,
    sensitivity_estimate, single_node_problem, single_node_reduction_holds, RegretCurve, SensitivityOptions, TsOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain_curves(seeds: u64, iterations: usize) -> Vec<RegretCurve> {
    (0..seeds)
        .map(|s| {
            let p = chain_problem(50, 1000 + s).unwrap();
            nominal_ts_run(&p, iterations, s, &TsOptions::default()).unwrap()
        })
        .collect()
}

#[test]
fn single_node_network_matches_classical_ts() {
    for seed in 0..5 {
        let p = single_node_problem(40, 77 + seed).unwrap();
        assert!(single_node_reduction_holds(&p, 30, seed, &TsOptions::default()).unwrap(), "seed {seed}");
    }
}

#[test]
fn chain_regret_is_sublinear_and_inequalities_hold() {
    let curves = chain_curves(20, 100);
    for c in &curves {
        assert!(c.instantaneous.iter().all(|r| *r >= 0.0));
        assert!(c.simple.iter().all(|r| *r >= 0.0));
        assert!(c.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }
    let avg: Vec<f64> = [25, 50, 100].iter().map(|&t| mean_average_regret(&curves, t)).collect();
    assert!(avg[0] > avg[1] && avg[1] > avg[2], "{avg:?}");
    let rows = regret_inequality_check(&curves, &[1, 10, 25, 50, 100]).unwrap();
    for r in &rows {
        assert!(r.holds, "{r:?}");
    }
}

#[test]
fn chain_sensitivity_is_triangular() {
    let p = chain_problem(50, 3).unwrap();
    let fp = FixedPointOptions::default();
    let boxes = probe_boxes(&p, &fp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = sensitivity_estimate(&p.net, &p.truth, &boxes, &SensitivityOptions::default(), &mut rng).unwrap();
    assert_eq!(m.spectral_radius, 0.0);
    assert_eq!(m.edges.len(), 2);
    for i in 0..3 {
        for j in i..3 {
            assert_eq!(m.a[(i, j)], 0.0);
        }
    }
    let (l1, l2) = (m.edges[0].value, m.edges[1].value);
    assert!(l1 > 0.0 && l2 > 0.0);
    // e₃ᵀ(I − A)⁻¹ = (A₃₂A₂₁, A₃₂, 1) for the chain.
    let (a21, a32) = (l1 * l1, l2 * l2);
    let expected = (a32 * a21).max(a32).max(1.0);
    assert!((m.l_net.unwrap() - expected).abs() <= 1e-12 * expected);
}

#[test]
fn bound_scales_with_gamma_and_horizon() {
    let p = chain_problem(50, 1).unwrap();
    let gamma = mig_sum(&p, 50, &FixedPointOptions::default()).unwrap();
    let points: Vec<(usize, f64)> = (1..=50).map(|t| (t, gamma[t - 1])).collect();
    let b = bound_curve(&points, 50, 1.5, 1e-2, 1.0);
    assert!(b.windows(2).all(|w| w[1] >= w[0]));
    let doubled: Vec<(usize, f64)> = points.iter().map(|&(t, g)| (t, 2.0 * g)).collect();
    let b2 = bound_curve(&doubled, 50, 1.5, 1e-2, 1.0);
    for (a, c) in b.iter().zip(&b2) {
        assert!((c / a - 2f64.sqrt()).abs() < 1e-12);
    }
    let wider = bound_curve(&points, 100, 1.5, 1e-2, 1.0);
    assert!(wider.iter().zip(&b).all(|(w, n)| w >= n));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_gain_is_monotone_with_shrinking_increments(seed in 0u64..1000, noise in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let candidates: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let p = KernelParams::new(1.3, vec![0.3, 0.6], noise).unwrap();
        let g = mig_greedy(&p, &candidates, 20, noise).unwrap();
        let mut prev = 0.0;
        let mut prev_inc = f64::INFINITY;
        for v in g {
            let inc = v - prev;
            prop_assert!(inc >= -1e-12);
            prop_assert!(inc <= prev_inc + 1e-9);
            prev = v;
            prev_inc = inc;
        }
    }
}
