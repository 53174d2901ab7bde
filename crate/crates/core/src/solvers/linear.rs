//! Linear drivers `f = a + beta y + mu z` and the adjoint representation
//! `Y_t = E[xi Gamma_{t,tau} + ∫_t^tau Gamma_{t,s} a_s ds | F_t]` with
//! `d Gamma_{t,s} = Gamma_{t,s} (beta_s ds + mu_s dW_s)`, `Gamma_{t,t} = 1`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::{active_set, terminal_values, Projector, RegressionBasis};
use crate::bsde::{BsdeProblem, Driver, Horizon, PathContext, Solution, TerminalCondition};
use crate::error::{invalid, Error, Result};
use crate::paths::PathEnsemble;
use crate::stats::mean_estimate;

/// Largest exponent whose `exp` is finite in `f64`.
const MAX_EXPONENT: f64 = 709.0;

/// A coefficient process `c(t, path)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Custom(Arc<dyn Fn(f64, &PathContext) -> f64 + Send + Sync>),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "{c}"),
            Coefficient::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Coefficient {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64, &PathContext) -> f64 + Send + Sync + 'static,
    {
        Coefficient::Custom(Arc::new(f))
    }

    pub fn eval(&self, t: f64, ctx: &PathContext) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Custom(f) => f(t, ctx),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

/// `f(t, y, z) = forcing + beta * y + mu * z` with declared bounds on
/// `|beta|` and `|mu|`.
#[derive(Debug, Clone)]
pub struct LinearDriverSpec {
    pub beta: Coefficient,
    pub mu: Coefficient,
    pub forcing: Coefficient,
    pub beta_bound: f64,
    pub mu_bound: f64,
}

impl LinearDriverSpec {
    /// Constant coefficients; the bounds are the absolute values.
    pub fn constant(beta: f64, mu: f64, forcing: f64) -> Self {
        Self {
            beta: beta.into(),
            mu: mu.into(),
            forcing: forcing.into(),
            beta_bound: beta.abs(),
            mu_bound: mu.abs(),
        }
    }

    pub fn eval(&self, t: f64, y: f64, z: f64, ctx: &PathContext) -> f64 {
        self.forcing.eval(t, ctx) + self.beta.eval(t, ctx) * y + self.mu.eval(t, ctx) * z
    }

    /// Checks the declared bounds at every `(t_i, W[m][i])` of the ensemble.
    pub fn check_bounds(&self, ensemble: &PathEnsemble) -> Result<()> {
        let grid = ensemble.grid();
        let bad = (0..ensemble.paths()).into_par_iter().find_first(|&m| {
            (0..grid.len()).any(|i| {
                let ctx = PathContext { path: m, w: ensemble.level(m, i) };
                let t = grid.time(i);
                self.beta.eval(t, &ctx).abs() > self.beta_bound
                    || self.mu.eval(t, &ctx).abs() > self.mu_bound
            })
        });
        match bad {
            Some(m) => Err(invalid(format!("linear coefficients exceed declared bounds on path {m}"))),
            None => Ok(()),
        }
    }

    /// As a BSDE driver.
    pub fn to_driver(&self) -> Driver {
        Driver::Linear(self.clone())
    }
}

/// `Gamma[m][i] = Gamma_{t_anchor, t_i}` for `i >= anchor`, path-major.
#[derive(Debug, Clone)]
pub struct AdjointEnsemble {
    pub anchor: usize,
    pub paths: usize,
    width: usize,
    values: Vec<f64>,
}

impl AdjointEnsemble {
    /// `Gamma_{t_anchor, t_i}`; `i` must be at least the anchor.
    pub fn value(&self, m: usize, i: usize) -> f64 {
        assert!(i >= self.anchor, "adjoint is only defined from its anchor on");
        self.values[m * self.width + (i - self.anchor)]
    }

    pub fn terminal_column(&self) -> Vec<f64> {
        (0..self.paths).map(|m| self.values[m * self.width + self.width - 1]).collect()
    }
}

/// Log-Euler simulation of the adjoint from `anchor`:
/// `log G_{i+1} = log G_i + (beta_i - mu_i^2/2) dt + mu_i dW_i`.
pub fn simulate_adjoint(
    spec: &LinearDriverSpec,
    ensemble: &PathEnsemble,
    anchor: usize,
) -> Result<AdjointEnsemble> {
    let grid = ensemble.grid();
    let n = grid.steps();
    if anchor > n {
        return Err(invalid(format!("anchor index {anchor} is off the grid")));
    }
    let dt = grid.dt();
    let width = n + 1 - anchor;
    let mut values = vec![0.0; ensemble.paths() * width];
    let worst = values
        .par_chunks_mut(width)
        .enumerate()
        .map(|(m, row)| {
            let mut lg: f64 = 0.0;
            let mut worst: f64 = 0.0;
            row[0] = 1.0;
            for i in anchor..n {
                let ctx = PathContext { path: m, w: ensemble.level(m, i) };
                let t = grid.time(i);
                let b = spec.beta.eval(t, &ctx);
                let mu = spec.mu.eval(t, &ctx);
                lg += (b - 0.5 * mu * mu) * dt + mu * ensemble.increment(m, i);
                worst = worst.max(lg);
                row[i + 1 - anchor] = lg.exp();
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    if !(worst <= MAX_EXPONENT) {
        return Err(Error::Overflow { context: "adjoint process", max_exponent: worst });
    }
    Ok(AdjointEnsemble { anchor, paths: ensemble.paths(), width, values })
}

/// Evaluates the explicit solution formula.
///
/// `Y0` is the plain path average of `xi Gamma_{0,tau} + sum_{i<k} Gamma_{0,t_i} a_i dt`.
/// For `t_i > 0`, `Y_i` regresses `(xi Gamma_{0,tau} + sum_{l=i}^{k-1} Gamma_{0,l} a_l dt) / Gamma_{0,i}`
/// on time-`t_i` features; `Z_i` comes from the `dW` regression of `Y_{i+1} - Y_i`.
pub fn linear_explicit(
    spec: &LinearDriverSpec,
    terminal: &TerminalCondition,
    horizon: &Horizon,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<Solution> {
    spec.check_bounds(ensemble)?;
    let grid = *ensemble.grid();
    let paths = ensemble.paths();
    let n = grid.steps();
    let dt = grid.dt();
    let probe = BsdeProblem::new(Driver::Zero, terminal.clone(), horizon.clone());
    let k = probe.horizon_indices(&grid, paths)?;
    let xi = terminal_values(terminal, ensemble, &k);
    let gamma = simulate_adjoint(spec, ensemble, 0)?;

    // running functional sum_{l >= i} Gamma_l a_l dt, seeded with xi Gamma_k
    let mut acc: Vec<f64> = (0..paths).map(|m| xi[m] * gamma.value(m, k[m])).collect();
    let mut y = vec![0.0; grid.len() * paths];
    let mut z = vec![0.0; grid.len() * paths];
    for m in 0..paths {
        for i in k[m]..=n {
            y[i * paths + m] = xi[m];
        }
    }
    let mut diagnostics = Vec::new();
    for i in (0..n).rev() {
        let act = active_set(ensemble, &k, i, None);
        if act.index.is_empty() {
            continue;
        }
        let t = grid.time(i);
        for (r, &m) in act.index.iter().enumerate() {
            let ctx = PathContext { path: m, w: act.state[r] };
            acc[m] += gamma.value(m, i) * spec.forcing.eval(t, &ctx) * dt;
        }
        let target: Vec<f64> = act.index.iter().map(|&m| acc[m] / gamma.value(m, i)).collect();
        let (proj, diag) = Projector::build(basis, i, t, &act.state, None)?;
        diagnostics.push(diag);
        let fit = proj.fit(&act.state, None, &target);
        for (r, &m) in act.index.iter().enumerate() {
            if !fit[r].is_finite() {
                return Err(Error::NonFinite { step: i, context: "explicit linear formula" });
            }
            y[i * paths + m] = fit[r];
        }
        let zt: Vec<f64> = act
            .index
            .iter()
            .map(|&m| (y[(i + 1) * paths + m] - y[i * paths + m]) * ensemble.increment(m, i) / dt)
            .collect();
        let zf = proj.fit(&act.state, None, &zt);
        for (r, &m) in act.index.iter().enumerate() {
            z[i * paths + m] = zf[r];
        }
    }
    diagnostics.reverse();
    // acc now holds the full pathwise functional from t = 0
    let est = mean_estimate(&acc);
    let mut sol = Solution::from_parts(grid, paths, y, z, est.std_error, diagnostics);
    sol.y0 = est.mean;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, sample_ensemble};

    #[test]
    fn trivial_adjoint_is_one() {
        let g = make_grid(1.0, 16).unwrap();
        let e = sample_ensemble(&g, 10, 2).unwrap();
        let a = simulate_adjoint(&LinearDriverSpec::constant(0.0, 0.0, 0.0), &e, 0).unwrap();
        for m in 0..10 {
            for i in 0..=16 {
                assert_eq!(a.value(m, i), 1.0);
            }
        }
    }

    #[test]
    fn deterministic_growth() {
        let g = make_grid(1.0, 256).unwrap();
        let e = sample_ensemble(&g, 3, 2).unwrap();
        let a = simulate_adjoint(&LinearDriverSpec::constant(0.1, 0.0, 0.0), &e, 0).unwrap();
        for m in 0..3 {
            assert!((a.value(m, 256) - 0.1f64.exp()).abs() < 1e-13);
        }
        let mid = simulate_adjoint(&LinearDriverSpec::constant(0.1, 0.0, 0.0), &e, 128).unwrap();
        assert_eq!(mid.value(0, 128), 1.0);
        assert!((mid.value(0, 256) - 0.05f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn overflow_is_reported() {
        let g = make_grid(1.0, 4).unwrap();
        let e = sample_ensemble(&g, 2, 2).unwrap();
        let err = simulate_adjoint(&LinearDriverSpec::constant(1000.0, 0.0, 0.0), &e, 0).unwrap_err();
        assert!(matches!(err, Error::Overflow { max_exponent, .. } if max_exponent > 709.0));
    }

    #[test]
    fn declared_bounds_are_checked() {
        let g = make_grid(1.0, 4).unwrap();
        let e = sample_ensemble(&g, 2, 2).unwrap();
        let mut spec = LinearDriverSpec::constant(0.5, 0.0, 0.0);
        spec.beta_bound = 0.1;
        assert!(spec.check_bounds(&e).is_err());
    }
}
