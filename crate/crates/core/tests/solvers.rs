use bsde_timechange::bsde::{BsdeProblem, Driver, Horizon, TerminalCondition};
use bsde_timechange::paths::{first_exit_time, make_grid, sample_ensemble, StoppingTimeField};
use bsde_timechange::solvers::{
    cole_hopf_reference, linear_explicit, simulate_adjoint, solve_backward_regression, LinearDriverSpec,
    RegressionBasis,
};
use bsde_timechange::stats::{mean, mean_estimate};
use proptest::prelude::*;

fn solve(driver: Driver, terminal: TerminalCondition, horizon: Horizon, steps: usize, paths: usize, seed: u64) -> (f64, f64) {
    let g = make_grid(1.0, steps).unwrap();
    let e = sample_ensemble(&g, paths, seed).unwrap();
    let horizon = match horizon {
        Horizon::Stopping(f) => Horizon::Stopping(StoppingTimeField::new(g, f.indices().to_vec()).unwrap()),
        h => h,
    };
    let s = solve_backward_regression(&BsdeProblem::new(driver, terminal, horizon), &e, &RegressionBasis::default())
        .unwrap();
    (s.y0, s.y0_std_error)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_data_accumulate_the_horizon(c in -5.0f64..5.0, k in -3.0f64..3.0, barrier in 0.3f64..1.5, seed in any::<u64>()) {
        let g = make_grid(1.0, 32).unwrap();
        let e = sample_ensemble(&g, 400, seed).unwrap();
        let tau = first_exit_time(&e, barrier).unwrap();
        let expected = c + k * mean(&tau.times());
        let p = BsdeProblem::new(Driver::Constant(k), TerminalCondition::Constant(c), Horizon::Stopping(tau));
        let s = solve_backward_regression(&p, &e, &RegressionBasis::default()).unwrap();
        prop_assert!((s.y0 - expected).abs() < 1e-10, "{} vs {}", s.y0, expected);
    }

    #[test]
    fn deterministic_linear_formula(beta in -1.0f64..1.0, forcing in -2.0f64..2.0, c in -3.0f64..3.0) {
        let g = make_grid(1.0, 256).unwrap();
        let e = sample_ensemble(&g, 50, 1).unwrap();
        let spec = LinearDriverSpec::constant(beta, 0.0, forcing);
        let s = linear_explicit(&spec, &TerminalCondition::Constant(c), &Horizon::Constant(1.0), &e, &RegressionBasis::default()).unwrap();
        let growth = beta.exp();
        let integral = if beta.abs() < 1e-12 { 1.0 } else { (growth - 1.0) / beta };
        let expected = c * growth + forcing * integral;
        prop_assert!((s.y0 - expected).abs() < 1e-2 * (1.0 + expected.abs()), "{} vs {}", s.y0, expected);
    }

    #[test]
    fn comparison_in_the_driver(k1 in -1.0f64..1.0, dk in 0.01f64..1.0, seed in any::<u64>()) {
        let lo = solve(Driver::Constant(k1), TerminalCondition::TanhStoppedLevel, Horizon::Constant(1.0), 16, 500, seed).0;
        let hi = solve(Driver::Constant(k1 + dk), TerminalCondition::TanhStoppedLevel, Horizon::Constant(1.0), 16, 500, seed).0;
        prop_assert!(hi > lo);
    }
}

#[test]
fn optional_stopping_for_w_tau() {
    let g = make_grid(1.0, 128).unwrap();
    let e = sample_ensemble(&g, 20_000, 31).unwrap();
    let tau = first_exit_time(&e, 1.0).unwrap();
    let p = BsdeProblem::new(Driver::Zero, TerminalCondition::StoppedLevel, Horizon::Stopping(tau));
    let s = solve_backward_regression(&p, &e, &RegressionBasis::default()).unwrap();
    assert!(s.y0.abs() <= 3.0 * s.y0_std_error, "{} +- {}", s.y0, s.y0_std_error);
}

#[test]
fn compensated_square_vanishes() {
    let g = make_grid(1.0, 128).unwrap();
    let e = sample_ensemble(&g, 20_000, 32).unwrap();
    let tau = first_exit_time(&e, 1.0).unwrap();
    let p = BsdeProblem::new(Driver::Constant(-1.0), TerminalCondition::SquaredStoppedLevel, Horizon::Stopping(tau));
    let s = solve_backward_regression(&p, &e, &RegressionBasis::default()).unwrap();
    assert!(s.y0.abs() <= 3.0 * s.y0_std_error, "{} +- {}", s.y0, s.y0_std_error);
}

#[test]
fn formula_and_regression_agree_on_a_stopped_linear_problem() {
    let g = make_grid(1.0, 128).unwrap();
    let e = sample_ensemble(&g, 20_000, 33).unwrap();
    let tau = first_exit_time(&e, 1.0).unwrap();
    let spec = LinearDriverSpec::constant(0.2, 0.4, 0.1);
    let horizon = Horizon::Stopping(tau);
    let basis = RegressionBasis::default();
    let formula = linear_explicit(&spec, &TerminalCondition::StoppedLevel, &horizon, &e, &basis).unwrap();
    let p = BsdeProblem::new(spec.to_driver(), TerminalCondition::StoppedLevel, horizon);
    let reg = solve_backward_regression(&p, &e, &basis).unwrap();
    let bound = 3.0 * (formula.y0_std_error + reg.y0_std_error) + 0.02 * formula.y0.abs();
    assert!((formula.y0 - reg.y0).abs() <= bound, "{} vs {}", formula.y0, reg.y0);
}

#[test]
fn regression_tracks_cole_hopf() {
    let g = make_grid(1.0, 64).unwrap();
    let e = sample_ensemble(&g, 20_000, 34).unwrap();
    let terminal = TerminalCondition::TanhStoppedLevel;
    let horizon = Horizon::Constant(1.0);
    let c = cole_hopf_reference(0.25, &terminal, &e, &horizon).unwrap();
    let p = BsdeProblem::new(Driver::Quadratic { alpha: 0.25 }, terminal, horizon);
    let s = solve_backward_regression(&p, &e, &RegressionBasis::default()).unwrap();
    let bound = 3.0 * (s.y0_std_error + c.std_error) + 0.02 * c.y0.abs();
    assert!((s.y0 - c.y0).abs() <= bound, "{} vs {}", s.y0, c.y0);
}

#[test]
fn adjoint_examples() {
    let g = make_grid(1.0, 100).unwrap();
    let e = sample_ensemble(&g, 40_000, 35).unwrap();
    let flat = simulate_adjoint(&LinearDriverSpec::constant(0.0, 0.0, 0.0), &e, 0).unwrap();
    assert!(flat.terminal_column().iter().all(|&v| v == 1.0));
    let growth = simulate_adjoint(&LinearDriverSpec::constant(0.1, 0.0, 0.0), &e, 0).unwrap();
    assert!(growth.terminal_column().iter().all(|v| (v - 0.1f64.exp()).abs() < 1e-12));
    let noise = simulate_adjoint(&LinearDriverSpec::constant(0.0, 0.3, 0.0), &e, 0).unwrap();
    let est = mean_estimate(&noise.terminal_column());
    assert!(est.within(1.0, 3.0), "{est:?}");
    let anchored = simulate_adjoint(&LinearDriverSpec::constant(0.1, 0.0, 0.0), &e, 50).unwrap();
    assert!((anchored.value(0, 100) - 0.05f64.exp()).abs() < 1e-12);
    assert_eq!(anchored.value(0, 50), 1.0);
}
