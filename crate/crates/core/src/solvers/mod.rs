//! Numerical BSDE solvers: backward least-squares regression, the explicit
//! linear formula through the adjoint process, and the Cole-Hopf oracle for
//! the quadratic driver.

mod linear;
mod regression;

use std::io::Write;

use rayon::prelude::*;

pub use linear::{
    linear_explicit, simulate_adjoint, AdjointEnsemble, Coefficient, LinearDriverSpec,
};
pub(crate) use regression::Projector;
pub use regression::{BasisKind, RegressionBasis, StepDiagnostics};

use crate::bsde::{BsdeProblem, Horizon, PathContext, Solution, TerminalCondition};
use crate::error::{invalid, Error, Result};
use crate::paths::PathEnsemble;
use crate::stats::mean_estimate;

/// `xi_m` for every path, evaluated on the stopped path `W[m][0..=k_m]`.
pub(crate) fn terminal_values(
    terminal: &TerminalCondition,
    ensemble: &PathEnsemble,
    horizon: &[usize],
) -> Vec<f64> {
    (0..ensemble.paths())
        .into_par_iter()
        .map(|m| terminal.eval(m, &ensemble.path_levels(m)[..=horizon[m]]))
        .collect()
}

/// Active paths at step `i` (horizon strictly after `i`) with their state and
/// optional original-clock features.
pub(crate) struct ActiveSet {
    pub index: Vec<usize>,
    pub state: Vec<f64>,
    pub clock: Option<Vec<f64>>,
}

pub(crate) fn active_set(
    ensemble: &PathEnsemble,
    horizon: &[usize],
    i: usize,
    clock_scales: Option<&[f64]>,
) -> ActiveSet {
    let index: Vec<usize> = (0..ensemble.paths()).filter(|&m| horizon[m] > i).collect();
    let state = index.iter().map(|&m| ensemble.level(m, i)).collect();
    let t = ensemble.grid().time(i);
    let clock = clock_scales.map(|s| index.iter().map(|&m| t * s[m]).collect());
    ActiveSet { index, state, clock }
}

/// Explicit backward least-squares scheme.
///
/// With `Y_N = xi` (frozen from each path's horizon on), every earlier step
/// regresses on the active paths only:
/// `Z_i = E[(Y_{i+1} - E[Y_{i+1}|F_i]) dW_i | F_i] / dt` and
/// `Y_i = E[Y_{i+1} + f(t_i, Y_{i+1}, Z_i) dt | F_i]`.
///
/// Because every basis contains the constants, `Y0` equals the path average
/// of `xi + sum_i f_i dt`; its standard error is that of this pathwise sum.
pub fn solve_backward_regression(
    problem: &BsdeProblem,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<Solution> {
    let grid = *ensemble.grid();
    let paths = ensemble.paths();
    let n = grid.steps();
    let dt = grid.dt();
    let horizon = problem.horizon_indices(&grid, paths)?;
    if let Some(s) = &problem.clock_scales {
        if s.len() != paths {
            return Err(invalid("clock scales do not match the ensemble"));
        }
    }
    let xi = terminal_values(&problem.terminal, ensemble, &horizon);
    if let Some(m) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: horizon[m], context: "terminal condition" });
    }

    let mut y = vec![0.0; grid.len() * paths];
    let mut z = vec![0.0; grid.len() * paths];
    for m in 0..paths {
        for i in horizon[m]..=n {
            y[i * paths + m] = xi[m];
        }
    }
    let mut pathwise = xi.clone();
    let mut diagnostics = Vec::new();

    for i in (0..n).rev() {
        let act = active_set(ensemble, &horizon, i, problem.clock_scales.as_deref());
        if act.index.is_empty() {
            continue;
        }
        let t = grid.time(i);
        let (proj, diag) = Projector::build(basis, i, t, &act.state, act.clock.as_deref())?;
        diagnostics.push(diag);
        let clock = act.clock.as_deref();

        let next: Vec<f64> = act.index.iter().map(|&m| y[(i + 1) * paths + m]).collect();
        let cond_next = proj.fit(&act.state, clock, &next);
        let z_target: Vec<f64> = act
            .index
            .iter()
            .enumerate()
            .map(|(r, &m)| (next[r] - cond_next[r]) * ensemble.increment(m, i) / dt)
            .collect();
        let z_fit = proj.fit(&act.state, clock, &z_target);
        let drift: Vec<f64> = act
            .index
            .par_iter()
            .enumerate()
            .map(|(r, &m)| {
                let ctx = PathContext { path: m, w: act.state[r] };
                problem.driver.eval(t, next[r], z_fit[r], &ctx) * dt
            })
            .collect();
        let y_target: Vec<f64> = next.iter().zip(&drift).map(|(a, b)| a + b).collect();
        let y_fit = proj.fit(&act.state, clock, &y_target);

        for (r, &m) in act.index.iter().enumerate() {
            if !(y_fit[r].is_finite() && z_fit[r].is_finite()) {
                return Err(Error::NonFinite { step: i, context: "backward regression" });
            }
            y[i * paths + m] = y_fit[r];
            z[i * paths + m] = z_fit[r];
            pathwise[m] += drift[r];
        }
    }
    diagnostics.reverse();
    let se = mean_estimate(&pathwise).std_error;
    Ok(Solution::from_parts(grid, paths, y, z, se, diagnostics))
}

/// Cole-Hopf estimate `Y0 = ln(mean exp(2 alpha xi)) / (2 alpha)` for
/// `f = alpha z^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColeHopfEstimate {
    pub y0: f64,
    /// Delta-method standard error.
    pub std_error: f64,
    /// Largest exponent `2 alpha xi_m` encountered.
    pub max_exponent: f64,
}

pub fn cole_hopf_reference(
    alpha: f64,
    terminal: &TerminalCondition,
    ensemble: &PathEnsemble,
    horizon: &Horizon,
) -> Result<ColeHopfEstimate> {
    if !(alpha.is_finite() && alpha != 0.0) {
        return Err(invalid(format!("Cole-Hopf needs a non-zero finite alpha, got {alpha}")));
    }
    let probe = BsdeProblem::new(crate::bsde::Driver::Zero, terminal.clone(), horizon.clone());
    let k = probe.horizon_indices(ensemble.grid(), ensemble.paths())?;
    let xi = terminal_values(terminal, ensemble, &k);
    let exps: Vec<f64> = xi.iter().map(|v| 2.0 * alpha * v).collect();
    let max_exponent = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_exponent.is_finite() {
        return Err(Error::Overflow { context: "Cole-Hopf transform", max_exponent });
    }
    // shift by the largest exponent so the average never overflows
    let shifted: Vec<f64> = exps.iter().map(|e| (e - max_exponent).exp()).collect();
    let est = mean_estimate(&shifted);
    let y0 = (est.mean.ln() + max_exponent) / (2.0 * alpha);
    let std_error = est.std_error / (est.mean * 2.0 * alpha.abs());
    Ok(ColeHopfEstimate { y0, std_error, max_exponent })
}

/// Writes solver diagnostics as CSV.
pub fn write_diagnostics_csv<W: Write>(diagnostics: &[StepDiagnostics], mut out: W) -> Result<()> {
    writeln!(out, "step,time,active_paths,columns,condition_number,fallback")?;
    for d in diagnostics {
        writeln!(
            out,
            "{},{:.16e},{},{},{:.16e},{}",
            d.step, d.time, d.active_paths, d.columns, d.condition_number, d.fallback
        )?;
    }
    Ok(())
}
