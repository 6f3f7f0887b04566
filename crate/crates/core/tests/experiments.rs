use rdl_core::experiments::*;
use rdl_core::harmonic_oracle::{AffineHarmonic, GridSpec};
use rdl_core::stochastics::WalkConfig;

fn estimate<'a>(rep: &'a ExperimentReport, quantity: &str, value: f64) -> &'a Estimate {
    rep.estimates
        .iter()
        .find(|e| e.quantity == quantity && e.value == value)
        .unwrap_or_else(|| panic!("no estimate {quantity} at {value}"))
}

fn has_check(rep: &ExperimentReport, name: &str) -> bool {
    rep.checks.iter().any(|c| c.name == name)
}

fn small_grid(d: u32) -> GridSpec {
    GridSpec::new(d, 20.0, if d == 3 { 64 } else { 128 }).unwrap()
}

#[test]
fn log_log_slope_recovers_power_laws() {
    let xs = [4.0, 8.0, 16.0, 32.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.0)).collect();
    let flat = log_log_slope(&xs, &ys, &[0.0; 4]).unwrap();
    assert!((flat + 2.0).abs() < 1e-12);
    let ses: Vec<f64> = ys.iter().map(|y| 0.1 * y).collect();
    assert!((log_log_slope(&xs, &ys, &ses).unwrap() + 2.0).abs() < 1e-12);
    assert!(log_log_slope(&xs[..1], &ys[..1], &[0.0]).is_none());
    assert!(log_log_slope(&xs[..2], &[1.0, -1.0], &[0.0; 2]).is_none());
}

#[test]
fn sweeps_need_increasing_resolutions() {
    assert!(ConvergenceSweep::new("gap", vec![8, 4], vec![1.0, 0.5], vec![0.1, 0.1]).is_err());
    assert!(ConvergenceSweep::new("gap", vec![4, 8], vec![1.0], vec![0.1, 0.1]).is_err());
    let s = ConvergenceSweep::new("gap", vec![4, 8], vec![1.0, 0.25], vec![0.0, 0.0]).unwrap();
    assert!((s.slope.unwrap() + 2.0).abs() < 1e-12);
}

#[test]
fn walk_at_keeps_the_coupled_clock() {
    let coupled = walk_at(2, 1, 4.0, 8, 1.0, None).unwrap();
    assert_eq!(coupled, WalkConfig::coupled(2, 1, 4.0, 8, 1.0).unwrap());
    let banded = walk_at(2, 1, 4.0, 8, 1.0, Some(0.05)).unwrap();
    assert_eq!(banded.delta(), coupled.delta());
    assert_eq!(banded.theta(), coupled.theta());
    assert_eq!(banded.eps(), 0.05);
    assert_eq!(banded.fine_per_coarse(), 8);
}

#[test]
fn payoffs_evaluate_in_closed_form() {
    assert_eq!(Payoff::Constant { value: 2.5 }.eval(&[0.3, 1.0]), 2.5);
    let psi = Payoff::Gaussian {
        center: vec![1.0, 0.0],
        width: 2.0,
        amplitude: 3.0,
    };
    assert_eq!(psi.eval(&[1.0, 0.0]), 3.0);
    assert!((psi.eval(&[3.0, 0.0]) - 3.0 * (-0.5f64).exp()).abs() < 1e-15);
}

#[test]
fn constant_payoff_has_zero_gap_and_single_n_has_no_monotonicity() {
    let rep = run_weak_convergence(&WeakConvergenceConfig {
        ns: vec![4],
        paths: 2_000,
        reference_paths: 2_000,
        psi: Payoff::Constant { value: 1.0 },
        ..Default::default()
    })
    .unwrap();
    assert_eq!(estimate(&rep, "gap", 4.0).estimate, 0.0);
    assert!(!has_check(&rep, "gap_decreases"));
    assert!(rep.passed());
}

#[test]
fn affine_martingale_discrepancy_is_exactly_zero() {
    let rep = run_martingale_approx(&MartingaleApproxConfig {
        ns: vec![4, 8],
        paths: 500,
        f: HarmonicTest::Affine(AffineHarmonic {
            constant: 0.3,
            coeffs: vec![0.0, 1.0, 0.0],
        }),
        ..Default::default()
    })
    .unwrap();
    assert!(rep.passed(), "{:?}", rep.failures());
    assert!(has_check(&rep, "exact_telescoping_p2"));
}

#[test]
fn constant_test_function_pairs_to_zero() {
    let (f, _) = default_weak_formulation_pair();
    let rep = run_weak_formulation(&WeakFormulationConfig {
        n: 4,
        paths: 300,
        f,
        g: TestFunction::Constant { value: 1.0 },
        grid: small_grid(2),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(estimate(&rep, "discrete_pairing", 4.0).estimate, 0.0);
    let c = rep.estimates.iter().find(|e| e.quantity == "continuous_pairing").unwrap();
    assert_eq!(c.estimate, 0.0);
}

#[test]
fn symmetric_pair_has_vanishing_weighted_integral() {
    let f = TestFunction::gaussian(vec![0.0, 0.0], 1.0, 1.0).unwrap();
    let rep = run_gv_identity(&GvIdentityConfig {
        f: f.clone(),
        g: f,
        grid: small_grid(2),
        ..GvIdentityConfig::default_for(2)
    })
    .unwrap();
    let lhs = rep.estimates.iter().find(|e| e.quantity == "weighted_integral").unwrap();
    let rhs = rep.estimates.iter().find(|e| e.quantity == "oracle").unwrap();
    assert!(lhs.estimate.abs() < 1e-10 && rhs.estimate.abs() < 1e-10);
}

#[test]
fn truncated_weighted_pairing_approaches_the_riesz_pairing() {
    let spec = small_grid(2);
    let (f, g) = default_weak_formulation_pair();
    let target = -grid_riesz_pairing(&f, &g, 1, &spec).unwrap();
    let err = |top| (truncated_weighted_pairing(&f, &g, 1, &spec, top).unwrap() - target).abs();
    assert!(err(40.0) < err(4.0));
    assert!(err(40.0) < 1e-3 * target.abs());
    assert!(truncated_weighted_pairing(&f, &g, 1, &spec, 0.0).is_err());
}

#[test]
fn vector_functions_cancel_the_band_term() {
    for d in [2, 3] {
        let spec = small_grid(d);
        let (f, g) = vector_functions(&spec).unwrap();
        assert_eq!(g.len(), d as usize);
        let mut first_order = 0.0;
        let mut target = 0.0;
        for (k, gi) in g.iter().enumerate() {
            first_order += grid_derivative_pairing(&f, gi, k as u32 + 1, &spec).unwrap();
            target += grid_riesz_pairing(&f, gi, k as u32 + 1, &spec).unwrap();
        }
        assert!(first_order.abs() < 1e-12, "d={d}: {first_order}");
        assert!(target.abs() > 0.05, "d={d}: target {target}");
    }
}

#[test]
fn relabeling_coordinates_permutes_pairings() {
    let spec = small_grid(2);
    let (f, g) = default_vector_functions();
    for i in 1..=2u32 {
        let j = 3 - i;
        let direct = grid_riesz_pairing(&f, &g[0], i, &spec).unwrap();
        let swapped = grid_riesz_pairing(&f.relabeled(0, 1), &g[0].relabeled(0, 1), j, &spec).unwrap();
        assert!((direct - swapped).abs() < 1e-12, "{direct} vs {swapped}");
    }
}

#[test]
fn zero_test_functions_give_zero_vector_pairing() {
    let (f, _) = default_vector_functions();
    let rep = run_vector_experiment(&VectorConfig {
        f,
        g: vec![TestFunction::Constant { value: 0.0 }; 2],
        paths: 200,
        grid: small_grid(2),
        norm_depth: 4,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(estimate(&rep, "walk_pairing_sum", 2.0).estimate, 0.0);
    assert_eq!(estimate(&rep, "target_sum", 2.0).estimate, 0.0);
}

#[test]
fn centered_probe_is_consistent_with_zero() {
    let rep = run_pointwise_riesz(&PointwiseConfig {
        ys: vec![2.0],
        probes: vec![vec![0.0]],
        paths: 4_000,
        ..PointwiseConfig::default_for(1)
    })
    .unwrap();
    let e = estimate(&rep, "regression_y2", 0.0);
    assert!(e.estimate.abs() <= 3.0 * e.stderr, "{} +- {}", e.estimate, e.stderr);
}

#[test]
fn monte_carlo_moments_agree_with_enumeration() {
    let rep = run_moment_suite(&MomentConfig {
        mode: SamplingMode::MonteCarlo,
        paths: 100_000,
        ..Default::default()
    })
    .unwrap();
    assert!(rep.passed(), "{:?}", rep.failures());
}

#[test]
fn reports_are_pure_functions_of_the_config() {
    let cfg = WeakConvergenceConfig {
        ns: vec![4, 8],
        paths: 1_000,
        reference_paths: 1_000,
        ..Default::default()
    };
    let a = run_weak_convergence(&cfg).unwrap();
    let b = run_weak_convergence(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_weak_convergence(&WeakConvergenceConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(a.estimates, c.estimates);
}
