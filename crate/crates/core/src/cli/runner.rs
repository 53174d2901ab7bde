//! Executes scenarios against the library.

use std::time::Instant;

use super::scenario::{
    two_route_tolerance, DriverSpec, Experiment, HorizonSpec, ReferenceSpec, Scenario, TerminalSpec,
    Tolerance,
};
use super::table::{ResultRow, ResultTable};
use crate::bsde::{map_solution_back, to_constant_horizon, BsdeProblem, Driver, Horizon, TerminalCondition};
use crate::error::Result;
use crate::girsanov::{construct_measure_solution, FactoredDriver, MeasureConfig};
use crate::paths::{first_exit_time_monitored, make_grid, sample_ensemble, AdaptedProcess, PathEnsemble};
use crate::solvers::{cole_hopf_reference, linear_explicit, solve_backward_regression, LinearDriverSpec};
use crate::stats::mean_estimate;
use crate::timechange::{proportional_time_change, transformed_brownian, verify_integral_transport};

fn driver_of(spec: &DriverSpec) -> Driver {
    match *spec {
        DriverSpec::Zero {} => Driver::Zero,
        DriverSpec::Constant { value } => Driver::Constant(value),
        DriverSpec::Linear { beta, mu, forcing } => LinearDriverSpec::constant(beta, mu, forcing).to_driver(),
        DriverSpec::Quadratic { alpha } => Driver::Quadratic { alpha },
    }
}

fn terminal_of(spec: &TerminalSpec) -> TerminalCondition {
    match *spec {
        TerminalSpec::Constant { value } => TerminalCondition::Constant(value),
        TerminalSpec::WTau {} => TerminalCondition::StoppedLevel,
        TerminalSpec::TanhWTau {} => TerminalCondition::TanhStoppedLevel,
        TerminalSpec::WTauSquared {} => TerminalCondition::SquaredStoppedLevel,
    }
}

fn horizon_of(spec: &HorizonSpec, ensemble: &PathEnsemble, factor: usize) -> Result<Horizon> {
    Ok(match *spec {
        HorizonSpec::Constant { time } => Horizon::Constant(time),
        HorizonSpec::FirstExit { barrier, monitor_every } => {
            let every = if factor > 1 { monitor_every / factor } else { monitor_every };
            Horizon::Stopping(first_exit_time_monitored(ensemble, barrier, every)?)
        }
    })
}

struct Reference {
    value: f64,
    std_error: f64,
    provenance: String,
}

struct Context<'a> {
    scenario: &'a Scenario,
    ensemble: PathEnsemble,
    horizon: Horizon,
    driver: Driver,
    terminal: TerminalCondition,
}

impl Context<'_> {
    fn reference(&self, spec: &ReferenceSpec, ensemble: &PathEnsemble, horizon: &Horizon) -> Result<Reference> {
        let basis = crate::solvers::RegressionBasis::default();
        Ok(match spec {
            ReferenceSpec::Value { value, provenance } => {
                Reference { value: *value, std_error: 0.0, provenance: provenance.clone() }
            }
            ReferenceSpec::ColeHopf {} => {
                let DriverSpec::Quadratic { alpha } = self.scenario.driver else {
                    unreachable!("validated: Cole-Hopf reference needs a quadratic driver")
                };
                let c = cole_hopf_reference(alpha, &self.terminal, ensemble, horizon)?;
                Reference {
                    value: c.y0,
                    std_error: c.std_error,
                    provenance: "Cole-Hopf transform on the same ensemble".into(),
                }
            }
            ReferenceSpec::LinearFormula {} => {
                let DriverSpec::Linear { beta, mu, forcing } = self.scenario.driver else {
                    unreachable!("validated: linear-formula reference needs a linear driver")
                };
                let spec = LinearDriverSpec::constant(beta, mu, forcing);
                let s = linear_explicit(&spec, &self.terminal, horizon, ensemble, &basis)?;
                Reference {
                    value: s.y0,
                    std_error: s.y0_std_error,
                    provenance: "explicit linear formula on the same ensemble".into(),
                }
            }
            ReferenceSpec::MeanHorizon {} => {
                let times = match horizon {
                    Horizon::Constant(t) => vec![*t; ensemble.paths()],
                    Horizon::Stopping(f) => f.times(),
                };
                let e = mean_estimate(&times);
                Reference { value: e.mean, std_error: e.std_error, provenance: "ensemble mean of the horizon".into() }
            }
        })
    }

    fn row(&self, quantity: impl Into<String>, estimate: f64, std_error: Option<f64>, started: Instant) -> ResultRow {
        ResultRow {
            scenario: self.scenario.name.clone(),
            quantity: quantity.into(),
            estimate,
            std_error,
            reference: None,
            provenance: String::new(),
            pass: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn checked(
        &self,
        quantity: impl Into<String>,
        estimate: f64,
        std_error: f64,
        reference: &Reference,
        tolerance: &Tolerance,
        started: Instant,
    ) -> ResultRow {
        let pass = tolerance.accepts(estimate, std_error + reference.std_error, reference.value);
        ResultRow {
            reference: Some(reference.value),
            provenance: reference.provenance.clone(),
            pass: Some(pass),
            ..self.row(quantity, estimate, Some(std_error), started)
        }
    }
}

/// Runs one scenario. Numerical failures surface as library errors.
pub fn run_scenario(scenario: &Scenario) -> Result<ResultTable> {
    let started = Instant::now();
    let grid = make_grid(scenario.grid.horizon, scenario.grid.steps)?;
    let ensemble = sample_ensemble(&grid, scenario.ensemble.paths, scenario.ensemble.seed)?;
    let horizon = horizon_of(&scenario.horizon, &ensemble, 1)?;
    let ctx = Context {
        scenario,
        ensemble,
        horizon,
        driver: driver_of(&scenario.driver),
        terminal: terminal_of(&scenario.terminal),
    };
    let mut table = ResultTable::default();
    match &scenario.experiment {
        Experiment::Solve { basis, reference, tolerance } => {
            let problem = BsdeProblem::new(ctx.driver.clone(), ctx.terminal.clone(), ctx.horizon.clone());
            let sol = solve_backward_regression(&problem, &ctx.ensemble, basis)?;
            match reference {
                Some(r) => {
                    let r = ctx.reference(r, &ctx.ensemble, &ctx.horizon)?;
                    table.push(ctx.checked("Y0", sol.y0, sol.y0_std_error, &r, tolerance, started));
                }
                None => table.push(ctx.row("Y0", sol.y0, Some(sol.y0_std_error), started)),
            }
        }
        Experiment::LinearFormula { basis, reference, tolerance } => {
            let DriverSpec::Linear { beta, mu, forcing } = scenario.driver else {
                unreachable!("validated: linear_formula needs a linear driver")
            };
            let spec = LinearDriverSpec::constant(beta, mu, forcing);
            let formula = linear_explicit(&spec, &ctx.terminal, &ctx.horizon, &ctx.ensemble, basis)?;
            match reference {
                Some(r) => {
                    let r = ctx.reference(r, &ctx.ensemble, &ctx.horizon)?;
                    table.push(ctx.checked("Y0_formula", formula.y0, formula.y0_std_error, &r, tolerance, started));
                }
                None => table.push(ctx.row("Y0_formula", formula.y0, Some(formula.y0_std_error), started)),
            }
            let t1 = Instant::now();
            let problem = BsdeProblem::new(ctx.driver.clone(), ctx.terminal.clone(), ctx.horizon.clone());
            let reg = solve_backward_regression(&problem, &ctx.ensemble, basis)?;
            let r = Reference {
                value: formula.y0,
                std_error: formula.y0_std_error,
                provenance: "explicit linear formula on the same ensemble".into(),
            };
            table.push(ctx.checked("Y0_regression", reg.y0, reg.y0_std_error, &r, &two_route_tolerance(), t1));
        }
        Experiment::TransformCheck { basis, transformed_steps, tolerance } => {
            let Horizon::Stopping(tau) = &ctx.horizon else {
                unreachable!("validated: transform_check needs a stopping horizon")
            };
            let problem = BsdeProblem::new(ctx.driver.clone(), ctx.terminal.clone(), ctx.horizon.clone());
            let direct = solve_backward_regression(&problem, &ctx.ensemble, basis)?;
            table.push(ctx.row("Y0_direct", direct.y0, Some(direct.y0_std_error), started));
            let t1 = Instant::now();
            let change = proportional_time_change(tau)?;
            let unit = transformed_brownian(&ctx.ensemble, &change, *transformed_steps)?;
            let transformed = to_constant_horizon(&problem, &change)?;
            let sol = solve_backward_regression(&transformed, &unit.paths, basis)?;
            let back = map_solution_back(&sol, &change, ctx.ensemble.grid())?;
            let r = Reference {
                value: direct.y0,
                std_error: direct.y0_std_error,
                provenance: "direct stopped-horizon regression solve".into(),
            };
            table.push(ctx.checked("Y0_transformed", back.y0, sol.y0_std_error, &r, tolerance, t1));
            let gap = (back.y0 - direct.y0).abs();
            let zero = Reference {
                value: 0.0,
                std_error: 0.0,
                provenance: "two-route equivalence".into(),
            };
            let se = direct.y0_std_error + sol.y0_std_error;
            let bound = tolerance.bound(se, direct.y0);
            table.push(ResultRow {
                pass: Some(gap <= bound),
                ..ctx.checked("discrepancy", gap, se, &zero, tolerance, started)
            });
        }
        Experiment::MeasureSolution { basis, max_iters, tol, probes, tolerance } => {
            let factored = match scenario.driver {
                DriverSpec::Quadratic { alpha } => FactoredDriver::quadratic(alpha),
                _ => FactoredDriver::zero(),
            };
            let config = MeasureConfig { max_iters: *max_iters, tol: *tol, probes: *probes };
            let ms = construct_measure_solution(&ctx.terminal, &factored, &ctx.ensemble, &ctx.horizon, basis, &config)?;
            table.push(ResultRow {
                pass: Some(ms.converged && ms.iterations <= *max_iters),
                ..ctx.row("iterations", ms.iterations as f64, None, started)
            });
            let one = Reference { value: 1.0, std_error: 0.0, provenance: "density normalisation E[R] = 1".into() };
            table.push(ctx.checked(
                "density_mean",
                ms.density_mean.mean,
                ms.density_mean.std_error,
                &one,
                &Tolerance::default(),
                started,
            ));
            table.push(ResultRow { pass: Some(ms.density_min > 0.0), ..ctx.row("density_min", ms.density_min, None, started) });
            let zero = Reference {
                value: 0.0,
                std_error: 0.0,
                provenance: "Q-martingale increment on held-out paths".into(),
            };
            for p in &ms.martingale {
                table.push(ctx.checked(
                    format!("martingale_step_{}", p.step),
                    p.estimate.mean,
                    p.estimate.std_error,
                    &zero,
                    &Tolerance::default(),
                    started,
                ));
            }
            table.push(ctx.row(
                "representation_residual",
                ms.representation_residual.mean,
                Some(ms.representation_residual.std_error),
                started,
            ));
            let t1 = Instant::now();
            let problem = BsdeProblem::new(ctx.driver.clone(), ctx.terminal.clone(), ctx.horizon.clone());
            let reg = solve_backward_regression(&problem, &ctx.ensemble, basis)?;
            let r = Reference {
                value: reg.y0,
                std_error: reg.y0_std_error,
                provenance: "backward regression solve on the same ensemble".into(),
            };
            table.push(ctx.checked("Y0_measure_vs_regression", ms.y0, ms.y0_std_error, &r, tolerance, t1));
            if let DriverSpec::Quadratic { .. } = scenario.driver {
                let r = ctx.reference(&ReferenceSpec::ColeHopf {}, &ctx.ensemble, &ctx.horizon)?;
                table.push(ctx.checked("Y0_measure_vs_cole_hopf", ms.y0, ms.y0_std_error, &r, tolerance, t1));
            }
        }
        Experiment::Convergence { steps, basis, reference } => {
            let finest = *steps.last().expect("validated non-empty");
            let r = ctx.reference(reference, &ctx.ensemble, &ctx.horizon)?;
            let mut errors = Vec::new();
            for &n in steps {
                let t1 = Instant::now();
                let factor = finest / n;
                let coarse = ctx.ensemble.coarsen(factor)?;
                let horizon = horizon_of(&scenario.horizon, &coarse, factor)?;
                let problem = BsdeProblem::new(ctx.driver.clone(), ctx.terminal.clone(), horizon);
                let sol = solve_backward_regression(&problem, &coarse, basis)?;
                errors.push((sol.y0 - r.value).abs());
                table.push(ResultRow {
                    reference: Some(r.value),
                    provenance: r.provenance.clone(),
                    ..ctx.row(format!("Y0_N{n}"), sol.y0, Some(sol.y0_std_error), t1)
                });
            }
            let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
            table.push(ResultRow {
                pass: Some(decreasing),
                ..ctx.row("abs_error_decreasing", *errors.last().expect("non-empty"), None, started)
            });
        }
        Experiment::TimeChangeCheck { transformed_steps } => {
            let Horizon::Stopping(tau) = &ctx.horizon else {
                unreachable!("validated: time_change_check needs a stopping horizon")
            };
            let k = *transformed_steps;
            let change = proportional_time_change(tau)?;
            let unit = transformed_brownian(&ctx.ensemble, &change, k)?;
            let paths = unit.paths.paths();
            let qv: Vec<f64> =
                (0..paths).map(|m| unit.paths.path_increments(m).iter().map(|d| d * d).sum()).collect();
            let qv = mean_estimate(&qv);
            let unit_qv = Reference {
                value: 1.0,
                std_error: 0.0,
                provenance: "quadratic variation of Brownian motion on [0, 1]".into(),
            };
            let qv_tol = Tolerance { absolute: 0.05, ..Tolerance::default() };
            table.push(ctx.checked("qv_mean", qv.mean, qv.std_error, &unit_qv, &qv_tol, started));
            let end = mean_estimate(&unit.paths.level_column(k));
            let zero = Reference { value: 0.0, std_error: 0.0, provenance: "centred Brownian endpoint".into() };
            table.push(ctx.checked("w_tilde_end_mean", end.mean, end.std_error, &zero, &Tolerance::default(), started));
            if k % 2 == 0 {
                for (label, sign) in [("positive", 1.0), ("negative", -1.0)] {
                    let inc: Vec<f64> = (0..paths)
                        .filter(|&m| unit.paths.level(m, k / 2) * sign > 0.0)
                        .map(|m| unit.paths.level(m, k) - unit.paths.level(m, k / 2))
                        .collect();
                    let e = mean_estimate(&inc);
                    table.push(ctx.row(format!("increment_given_{label}_midpoint"), e.mean, Some(e.std_error), started));
                }
            }
            let t1 = Instant::now();
            let d = verify_integral_transport(
                &AdaptedProcess::brownian(&ctx.ensemble),
                &ctx.ensemble,
                &change,
                None,
                tau,
                k,
            )?;
            table.push(ctx.row("transport_discrepancy_mean", d.mean, None, t1));
            table.push(ctx.row("transport_discrepancy_max", d.max, None, t1));
        }
    }
    Ok(table)
}
