//! Measure solutions for drivers of the form `f(s, z) = z g(s, z)`.
//!
//! Under `Q = R P` with `R = exp(∫ g dW - ½∫ g² ds)` the process
//! `W^Q = W - ∫ g ds` is a Brownian motion and `dY = -f ds + Z dW = Z dW^Q`,
//! so `Y_t = E^Q[xi | F_t]`. The pair is found by iterating over `Z`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bsde::{BsdeProblem, Driver, Horizon, PathContext, TerminalCondition};
use crate::error::{invalid, Error, Result};
use crate::paths::{AdaptedProcess, PathEnsemble, TimeGrid};
use crate::solvers::{terminal_values, Projector, RegressionBasis};
use crate::stats::{mean, mean_estimate, MeanEstimate};

const MAX_EXPONENT: f64 = 709.0;

type FactorFn = Arc<dyn Fn(f64, f64, &PathContext) -> f64 + Send + Sync>;
type BoundFn = Arc<dyn Fn(f64, &PathContext) -> f64 + Send + Sync>;

/// `f(s, z) = z g(s, z)` with growth constant `c`, small-`z` radius
/// `epsilon` and bound process `psi`.
#[derive(Clone)]
pub struct FactoredDriver {
    label: String,
    g: FactorFn,
    pub c: f64,
    pub epsilon: f64,
    psi: BoundFn,
}

impl fmt::Debug for FactoredDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactoredDriver")
            .field("label", &self.label)
            .field("c", &self.c)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl FactoredDriver {
    pub fn custom<G, P>(label: impl Into<String>, g: G, c: f64, epsilon: f64, psi: P) -> Self
    where
        G: Fn(f64, f64, &PathContext) -> f64 + Send + Sync + 'static,
        P: Fn(f64, &PathContext) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), g: Arc::new(g), c, epsilon, psi: Arc::new(psi) }
    }

    /// `g = alpha z`, i.e. `f = alpha z^2`, with `c = |alpha|`, `epsilon = 1`
    /// and `psi = |alpha|`.
    pub fn quadratic(alpha: f64) -> Self {
        let a = alpha.abs();
        Self::custom(format!("quadratic({alpha})"), move |_, z, _| alpha * z, a, 1.0, move |_, _| a)
    }

    pub fn zero() -> Self {
        Self::custom("zero", |_, _, _| 0.0, 0.0, 1.0, |_, _| 0.0)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn g(&self, s: f64, z: f64, ctx: &PathContext) -> f64 {
        (self.g)(s, z, ctx)
    }

    pub fn psi(&self, s: f64, ctx: &PathContext) -> f64 {
        (self.psi)(s, ctx)
    }

    pub fn f(&self, s: f64, z: f64, ctx: &PathContext) -> f64 {
        z * self.g(s, z, ctx)
    }

    pub fn to_driver(&self) -> Driver {
        Driver::Factored(self.clone())
    }
}

/// Sample points for the structural checks.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionLattice {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    /// Brownian levels used to build path contexts.
    pub w: Vec<f64>,
}

impl AssumptionLattice {
    /// `ns` times on `[0, horizon]`, `nz` points on `[-z_max, z_max]`, and
    /// levels `{-1, 0, 1}`.
    pub fn uniform(horizon: f64, ns: usize, z_max: f64, nz: usize) -> Self {
        let lin = |a: f64, b: f64, n: usize| -> Vec<f64> {
            if n <= 1 {
                return vec![a];
            }
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
        };
        Self { s: lin(0.0, horizon, ns), z: lin(-z_max, z_max, nz), w: vec![-1.0, 0.0, 1.0] }
    }
}

impl Default for AssumptionLattice {
    fn default() -> Self {
        Self::uniform(1.0, 11, 10.0, 201)
    }
}

/// Outcome of each clause on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Every sampled `g` value is finite.
    pub adapted: bool,
    /// Largest `|g(z + h) - g(z)|` at the lattice spacing.
    pub modulus_coarse: f64,
    /// The same over the lattice refined four times.
    pub modulus_refined: f64,
    pub continuous: bool,
    /// `max |f| / (1 + z^2)`.
    pub growth_ratio: f64,
    pub growth: bool,
    /// `max (|g| - psi)` over `|z| <= epsilon`.
    pub small_z_excess: f64,
    pub small_z: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.adapted && self.continuous && self.growth && self.small_z
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "finite={} continuity={} (modulus {:.3e} -> {:.3e}) growth={} (ratio {:.3e}) small-z={} (excess {:.3e})",
            self.adapted,
            self.continuous,
            self.modulus_coarse,
            self.modulus_refined,
            self.growth,
            self.growth_ratio,
            self.small_z,
            self.small_z_excess
        )
    }
}

/// Report-only check of the structural conditions on a lattice.
pub fn check_assumption_h(driver: &FactoredDriver, lattice: &AssumptionLattice) -> AssumptionReport {
    let mut adapted = true;
    let mut growth_ratio: f64 = 0.0;
    let mut small_z_excess = f64::NEG_INFINITY;
    let mut modulus_coarse: f64 = 0.0;
    let mut modulus_refined: f64 = 0.0;
    let h = if lattice.z.len() > 1 { (lattice.z[1] - lattice.z[0]).abs() } else { 1e-3 };
    for &s in &lattice.s {
        for &w in &lattice.w {
            let ctx = PathContext { path: 0, w };
            let psi = driver.psi(s, &ctx);
            for &z in &lattice.z {
                let g = driver.g(s, z, &ctx);
                if !g.is_finite() {
                    adapted = false;
                    continue;
                }
                growth_ratio = growth_ratio.max((z * g).abs() / (1.0 + z * z));
                if z.abs() <= driver.epsilon {
                    small_z_excess = small_z_excess.max(g.abs() - psi);
                }
                modulus_coarse = modulus_coarse.max((driver.g(s, z + h, &ctx) - g).abs());
                let mut prev = g;
                for j in 1..=4 {
                    let next = driver.g(s, z + h * j as f64 / 4.0, &ctx);
                    modulus_refined = modulus_refined.max((next - prev).abs());
                    prev = next;
                }
            }
        }
    }
    if small_z_excess == f64::NEG_INFINITY {
        small_z_excess = 0.0;
    }
    let scale = 1e-12 * (1.0 + modulus_coarse);
    AssumptionReport {
        adapted,
        modulus_coarse,
        modulus_refined,
        continuous: modulus_refined.is_finite()
            && (modulus_coarse <= scale || modulus_refined <= 0.5 * modulus_coarse + scale),
        growth_ratio,
        growth: growth_ratio <= driver.c * (1.0 + 1e-12),
        small_z_excess,
        small_z: small_z_excess <= 1e-12,
    }
}

/// Density path and reweighted increments.
#[derive(Debug, Clone)]
pub struct GirsanovDensity {
    grid: TimeGrid,
    paths: usize,
    /// Running `log R`, time-major, frozen after each path's horizon.
    log_r: Vec<f64>,
    /// `dW^Q = dW - g dt`, time-major; zero after the horizon.
    dwq: Vec<f64>,
}

impl GirsanovDensity {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn log_density(&self, m: usize, i: usize) -> f64 {
        self.log_r[i * self.paths + m]
    }

    /// `R` at grid index `i` (the running density martingale).
    pub fn density_at(&self, m: usize, i: usize) -> f64 {
        self.log_density(m, i).exp()
    }

    /// Terminal densities `R[m]`.
    pub fn terminal(&self) -> Vec<f64> {
        let n = self.grid.steps();
        (0..self.paths).map(|m| self.density_at(m, n)).collect()
    }

    pub fn reweighted_increment(&self, m: usize, i: usize) -> f64 {
        self.dwq[i * self.paths + m]
    }
}

/// `R = exp(∫_0^tau g dW - ½ ∫_0^tau g² ds)` and `dW^Q` from sampled `g`.
pub fn girsanov_density(g: &AdaptedProcess, ensemble: &PathEnsemble, horizon: &Horizon) -> Result<GirsanovDensity> {
    let grid = *ensemble.grid();
    let paths = ensemble.paths();
    if g.grid() != &grid || g.paths() != paths {
        return Err(invalid("g does not match the ensemble"));
    }
    let probe = BsdeProblem::new(Driver::Zero, TerminalCondition::Constant(0.0), horizon.clone());
    let k = probe.horizon_indices(&grid, paths)?;
    density_from(&grid, paths, &k, ensemble, |m, i| g.value(m, i))
}

fn density_from<G>(grid: &TimeGrid, paths: usize, k: &[usize], ensemble: &PathEnsemble, g: G) -> Result<GirsanovDensity>
where
    G: Fn(usize, usize) -> f64 + Sync,
{
    let n = grid.steps();
    let dt = grid.dt();
    let mut log_r = vec![0.0; grid.len() * paths];
    let mut dwq = vec![0.0; n * paths];
    for i in 0..n {
        let (done, rest) = log_r.split_at_mut((i + 1) * paths);
        let prev = &done[i * paths..];
        let next = &mut rest[..paths];
        let dq = &mut dwq[i * paths..(i + 1) * paths];
        next.par_iter_mut()
            .zip(dq.par_iter_mut())
            .enumerate()
            .for_each(|(m, (lr, q))| {
                let dw = ensemble.increment(m, i);
                if i < k[m] {
                    let gi = g(m, i);
                    *lr = prev[m] + gi * dw - 0.5 * gi * gi * dt;
                    *q = dw - gi * dt;
                } else {
                    *lr = prev[m];
                }
            });
    }
    let worst = log_r.par_iter().cloned().reduce(|| f64::NEG_INFINITY, f64::max);
    if !(worst <= MAX_EXPONENT) {
        return Err(Error::Overflow { context: "Girsanov density", max_exponent: worst });
    }
    Ok(GirsanovDensity { grid: *grid, paths, log_r, dwq })
}

/// One step of the fixed-point history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub y0: f64,
    /// `max_i mean_m |Y^{k+1}_i - Y^k_i|`.
    pub change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Number of evenly spaced steps at which the Q-martingale probe runs.
    pub probes: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-3, probes: 5 }
    }
}

/// Mean of `R_{i+1} (Y_{i+1} - Y_i - Z_i dW^Q_i)` over held-out active paths.
///
/// `estimate.std_error` combines the held-out sampling error with the
/// sampling error of the fitted step `Y_i`, estimated from the training
/// residuals `R_{i+1} (Y_{i+1} - Y_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleProbe {
    pub step: usize,
    pub estimate: MeanEstimate,
    pub held_out_std_error: f64,
    pub fit_std_error: f64,
}

#[derive(Debug, Clone)]
pub struct MeasureSolution {
    pub grid: TimeGrid,
    pub paths: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    density: GirsanovDensity,
    pub y0: f64,
    pub y0_std_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub density_mean: MeanEstimate,
    pub density_min: f64,
    pub martingale: Vec<MartingaleProbe>,
    /// Mean of `Y_tau - Y_0 - sum Z dW^Q` across paths.
    pub representation_residual: MeanEstimate,
    pub assumption: AssumptionReport,
}

impl MeasureSolution {
    pub fn y(&self, m: usize, i: usize) -> f64 {
        self.y[i * self.paths + m]
    }

    pub fn z(&self, m: usize, i: usize) -> f64 {
        self.z[i * self.paths + m]
    }

    pub fn density(&self) -> &GirsanovDensity {
        &self.density
    }

    /// Terminal densities `R[m]`.
    pub fn terminal_density(&self) -> Vec<f64> {
        self.density.terminal()
    }
}

/// Picard iteration over `Z`.
///
/// Starting from `Z = 0`, each pass builds `R` from `g(s, Z)`, sets
/// `Y_i = E[r_i Y_{i+1} | F_i] / E[r_i | F_i]` backwards from `Y = xi` with the
/// one-step density `r_i = R_{i+1} / R_i` (the tower form of
/// `E[R_tau xi | F_i] / E[R_tau | F_i]`), and extracts
/// `Z_i` from the regression of `(Y_{i+1} - Y_i) dW^Q_i / dt`. The loop stops
/// once `g` no longer changes or `Y` moves by less than `tol`.
pub fn construct_measure_solution(
    terminal: &TerminalCondition,
    driver: &FactoredDriver,
    ensemble: &PathEnsemble,
    horizon: &Horizon,
    basis: &RegressionBasis,
    config: &MeasureConfig,
) -> Result<MeasureSolution> {
    let assumption = check_assumption_h(driver, &AssumptionLattice::uniform(ensemble.grid().horizon(), 11, 10.0, 201));
    if !assumption.passed() {
        return Err(Error::AssumptionViolated(Box::new(assumption)));
    }
    if config.max_iters == 0 || !(config.tol > 0.0) {
        return Err(invalid("max_iters must be positive and tol strictly positive"));
    }
    let grid = *ensemble.grid();
    let paths = ensemble.paths();
    let n = grid.steps();
    let dt = grid.dt();
    let probe = BsdeProblem::new(Driver::Zero, terminal.clone(), horizon.clone());
    let k = probe.horizon_indices(&grid, paths)?;
    let xi = terminal_values(terminal, ensemble, &k);
    if let Some(m) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: k[m], context: "terminal condition" });
    }

    // projectors depend only on the active set and state, so build them once
    let mut projectors: Vec<Option<(Vec<usize>, Vec<f64>, Projector)>> = Vec::with_capacity(n);
    for i in 0..n {
        let index: Vec<usize> = (0..paths).filter(|&m| k[m] > i).collect();
        if index.is_empty() {
            projectors.push(None);
            continue;
        }
        let state: Vec<f64> = index.iter().map(|&m| ensemble.level(m, i)).collect();
        let (proj, _) = Projector::build(basis, i, grid.time(i), &state, None)?;
        projectors.push(Some((index, state, proj)));
    }

    let g_of = |z: &[f64]| -> Vec<f64> {
        (0..n * paths)
            .into_par_iter()
            .map(|idx| {
                let (i, m) = (idx / paths, idx % paths);
                if i < k[m] {
                    let ctx = PathContext { path: m, w: ensemble.level(m, i) };
                    driver.g(grid.time(i), z[idx], &ctx)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut z = vec![0.0; grid.len() * paths];
    let mut y = vec![0.0; grid.len() * paths];
    let mut g_now = g_of(&z);
    let mut history = Vec::new();
    let mut converged = false;
    let mut density = None;

    for iteration in 1..=config.max_iters {
        let dens = density_from(&grid, paths, &k, ensemble, |m, i| g_now[i * paths + m])?;
        let new_y = expectation_under_q(&grid, paths, &k, &xi, &dens, &projectors)?;
        let change = (0..grid.len())
            .map(|i| {
                let a = &new_y[i * paths..(i + 1) * paths];
                let b = &y[i * paths..(i + 1) * paths];
                mean(&a.iter().zip(b).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
            })
            .fold(0.0, f64::max);
        y = new_y;
        z = extract_z(&grid, paths, &y, &dens, &projectors, dt);
        history.push(IterationRecord { iteration, y0: mean(&y[..paths]), change });
        density = Some(dens);
        // an unchanged g reproduces the same measure, hence the same Y
        let g_next = g_of(&z);
        let fixed = g_next == g_now;
        g_now = g_next;
        if fixed || (iteration > 1 && change < config.tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { history });
    }
    let density = density.expect("at least one iteration ran");

    let r = density.terminal();
    let density_mean = mean_estimate(&r);
    let density_min = r.iter().cloned().fold(f64::INFINITY, f64::min);
    let y0 = mean(&y[..paths]);
    let mr = density_mean.mean;
    let resid: Vec<f64> = r.iter().zip(&xi).map(|(rm, x)| rm * (x - y0) / mr).collect();
    let y0_std_error = mean_estimate(&resid).std_error;

    let probe_steps: Vec<usize> = {
        let p = config.probes.min(n);
        (0..p).map(|j| (j * n) / p).collect()
    };
    let martingale = holdout_probes(&grid, paths, &k, &xi, ensemble, &density, basis, &probe_steps)?;

    let residual: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let integral: f64 = (0..k[m]).map(|i| z[i * paths + m] * density.reweighted_increment(m, i)).sum();
            y[k[m] * paths + m] - y[m] - integral
        })
        .collect();

    Ok(MeasureSolution {
        grid,
        paths,
        y,
        z,
        density,
        y0,
        y0_std_error,
        iterations: history.len(),
        converged,
        history,
        density_mean,
        density_min,
        martingale,
        representation_residual: mean_estimate(&residual),
        assumption,
    })
}

type StepProjector = Option<(Vec<usize>, Vec<f64>, Projector)>;

fn expectation_under_q(
    grid: &TimeGrid,
    paths: usize,
    k: &[usize],
    xi: &[f64],
    dens: &GirsanovDensity,
    projectors: &[StepProjector],
) -> Result<Vec<f64>> {
    let n = grid.steps();
    let mut y = vec![0.0; grid.len() * paths];
    for m in 0..paths {
        for i in k[m]..=n {
            y[i * paths + m] = xi[m];
        }
    }
    for (i, slot) in projectors.iter().enumerate().rev() {
        let Some((index, state, proj)) = slot else { continue };
        let weight: Vec<f64> = index
            .iter()
            .map(|&m| (dens.log_density(m, i + 1) - dens.log_density(m, i)).exp())
            .collect();
        let weighted: Vec<f64> = index.iter().zip(&weight).map(|(&m, w)| w * y[(i + 1) * paths + m]).collect();
        let num = proj.fit(state, None, &weighted);
        let den = proj.fit(state, None, &weight);
        for (r, &m) in index.iter().enumerate() {
            let v = num[r] / den[r];
            if !(den[r] > 0.0 && v.is_finite()) {
                return Err(Error::NonFinite { step: i, context: "reweighted conditional expectation" });
            }
            y[i * paths + m] = v;
        }
    }
    Ok(y)
}

fn extract_z(
    grid: &TimeGrid,
    paths: usize,
    y: &[f64],
    dens: &GirsanovDensity,
    projectors: &[StepProjector],
    dt: f64,
) -> Vec<f64> {
    let mut z = vec![0.0; grid.len() * paths];
    for (i, slot) in projectors.iter().enumerate() {
        let Some((index, state, proj)) = slot else { continue };
        let target: Vec<f64> = index
            .iter()
            .map(|&m| (y[(i + 1) * paths + m] - y[i * paths + m]) * dens.reweighted_increment(m, i) / dt)
            .collect();
        let fit = proj.fit(state, None, &target);
        for (r, &m) in index.iter().enumerate() {
            z[i * paths + m] = fit[r];
        }
    }
    z
}

/// Q-martingale check on held-out paths.
///
/// With the converged measure fixed, the backward recursion for `Y` and the
/// `Z` regression are fitted on even-numbered paths only and then evaluated
/// on the odd-numbered ones, so the probe increments there are independent
/// of the fitted coefficients.
#[allow(clippy::too_many_arguments)]
fn holdout_probes(
    grid: &TimeGrid,
    paths: usize,
    k: &[usize],
    xi: &[f64],
    ensemble: &PathEnsemble,
    dens: &GirsanovDensity,
    basis: &RegressionBasis,
    steps: &[usize],
) -> Result<Vec<MartingaleProbe>> {
    let n = grid.steps();
    let dt = grid.dt();
    let mut y = vec![0.0; grid.len() * paths];
    for m in 0..paths {
        for i in k[m]..=n {
            y[i * paths + m] = xi[m];
        }
    }
    let mut probes = Vec::with_capacity(steps.len());
    for i in (0..n).rev() {
        let active: Vec<usize> = (0..paths).filter(|&m| k[m] > i).collect();
        let train: Vec<usize> = active.iter().copied().filter(|m| m % 2 == 0).collect();
        if train.is_empty() {
            continue;
        }
        let state = |set: &[usize]| -> Vec<f64> { set.iter().map(|&m| ensemble.level(m, i)).collect() };
        let (train_x, all_x) = (state(&train), state(&active));
        let (proj, _) = Projector::build(basis, i, grid.time(i), &train_x, None)?;
        let ratio = |m: usize| (dens.log_density(m, i + 1) - dens.log_density(m, i)).exp();
        let weight: Vec<f64> = train.iter().map(|&m| ratio(m)).collect();
        let weighted: Vec<f64> = train.iter().zip(&weight).map(|(&m, w)| w * y[(i + 1) * paths + m]).collect();
        let num = proj.evaluate(&proj.coefficients(&train_x, None, &weighted), &all_x, None);
        let den = proj.evaluate(&proj.coefficients(&train_x, None, &weight), &all_x, None);
        for (r, &m) in active.iter().enumerate() {
            let v = num[r] / den[r];
            if !(den[r] > 0.0 && v.is_finite()) {
                return Err(Error::NonFinite { step: i, context: "held-out conditional expectation" });
            }
            y[i * paths + m] = v;
        }
        if !steps.contains(&i) {
            continue;
        }
        let target: Vec<f64> = train
            .iter()
            .map(|&m| (y[(i + 1) * paths + m] - y[i * paths + m]) * dens.reweighted_increment(m, i) / dt)
            .collect();
        let held: Vec<usize> = active.iter().copied().filter(|m| m % 2 == 1).collect();
        let held_x = state(&held);
        let z = proj.evaluate(&proj.coefficients(&train_x, None, &target), &held_x, None);
        let incr: Vec<f64> = held
            .iter()
            .zip(&z)
            .map(|(&m, zm)| {
                dens.density_at(m, i + 1)
                    * (y[(i + 1) * paths + m] - y[i * paths + m] - zm * dens.reweighted_increment(m, i))
            })
            .collect();
        let resid: Vec<f64> = train
            .iter()
            .map(|&m| dens.density_at(m, i + 1) * (y[(i + 1) * paths + m] - y[i * paths + m]))
            .collect();
        let fit_std_error = mean_estimate(&resid).std_error;
        let held = mean_estimate(&incr);
        probes.push(MartingaleProbe {
            step: i,
            estimate: MeanEstimate { std_error: held.std_error.hypot(fit_std_error), ..held },
            held_out_std_error: held.std_error,
            fit_std_error,
        });
    }
    probes.reverse();
    Ok(probes)
}

/// Writes the iteration history as CSV.
pub fn write_history_csv<W: Write>(history: &[IterationRecord], mut out: W) -> Result<()> {
    writeln!(out, "iteration,y0,change")?;
    for h in history {
        writeln!(out, "{},{:.16e},{:.16e}", h.iteration, h.y0, h.change)?;
    }
    Ok(())
}
