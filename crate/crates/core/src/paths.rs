//! Time grids, seeded Brownian path ensembles, grid-aligned stopping times
//! and discrete Itô calculus on them.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::GaussianStream;

/// Uniform partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("grid horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i`; `t_N` is exactly the horizon.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Grid index of `t` when `t` coincides with a grid point (up to 1e-9 of a cell).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let r = x.round();
        if (x - r).abs() <= 1e-9 && r >= 0.0 && r <= self.steps as f64 {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Linear interpolation of grid values `row` at time `t`, using the grid
    /// value directly on exact hits.
    pub fn interpolate(&self, row: &[f64], t: f64) -> Option<f64> {
        debug_assert_eq!(row.len(), self.len());
        let tol = 1e-12 * self.horizon.max(1.0);
        if !(t >= -tol && t <= self.horizon + tol) {
            return None;
        }
        if let Some(i) = self.index_of(t) {
            return Some(row[i]);
        }
        let x = t / self.dt();
        let lo = (x.floor() as usize).min(self.steps - 1);
        let theta = x - lo as f64;
        Some((1.0 - theta) * row[lo] + theta * row[lo + 1])
    }
}

pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// Bundle of `M` Brownian paths on a common grid.
///
/// Increments and levels are stored path-major. Levels are the running sums
/// of the increments, so `W[m][i+1] - W[m][i] == dW[m][i]` up to the rounding
/// of that one addition, and `W[m][0] == 0` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    increments: Vec<f64>,
    levels: Vec<f64>,
}

impl PathEnsemble {
    /// Builds an ensemble from explicit increments (row-major, `M x N`).
    pub fn from_increments(grid: TimeGrid, seed: u64, increments: Vec<f64>) -> Result<Self> {
        let n = grid.steps();
        if increments.is_empty() || !increments.len().is_multiple_of(n) {
            return Err(invalid(format!(
                "increment buffer of length {} does not hold whole paths of {n} steps",
                increments.len()
            )));
        }
        let paths = increments.len() / n;
        let mut levels = vec![0.0; paths * (n + 1)];
        levels
            .par_chunks_mut(n + 1)
            .zip(increments.par_chunks(n))
            .for_each(|(lv, inc)| {
                let mut w = 0.0;
                for (i, d) in inc.iter().enumerate() {
                    w += d;
                    lv[i + 1] = w;
                }
            });
        Ok(Self { grid, paths, seed, increments, levels })
    }

    /// Builds an ensemble from explicit levels (row-major, `M x (N+1)`),
    /// taking increments as consecutive differences.
    pub fn from_levels(grid: TimeGrid, seed: u64, levels: Vec<f64>) -> Result<Self> {
        let width = grid.len();
        if levels.is_empty() || !levels.len().is_multiple_of(width) {
            return Err(invalid("level buffer does not hold whole paths"));
        }
        let paths = levels.len() / width;
        let mut increments = vec![0.0; paths * grid.steps()];
        for (inc, lv) in increments
            .chunks_mut(grid.steps())
            .zip(levels.chunks(width))
        {
            for i in 0..grid.steps() {
                inc[i] = lv[i + 1] - lv[i];
            }
        }
        Ok(Self { grid, paths, seed, increments, levels })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, m: usize, i: usize) -> f64 {
        self.increments[m * self.grid.steps() + i]
    }

    pub fn level(&self, m: usize, i: usize) -> f64 {
        self.levels[m * self.grid.len() + i]
    }

    pub fn path_levels(&self, m: usize) -> &[f64] {
        let w = self.grid.len();
        &self.levels[m * w..(m + 1) * w]
    }

    pub fn path_increments(&self, m: usize) -> &[f64] {
        let n = self.grid.steps();
        &self.increments[m * n..(m + 1) * n]
    }

    /// All increments, row-major `M x N`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// All levels, row-major `M x (N+1)`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `W[·][i]` across paths.
    pub fn level_column(&self, i: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.level(m, i)).collect()
    }

    /// `dW[·][i]` across paths.
    pub fn increment_column(&self, i: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.increment(m, i)).collect()
    }

    /// The same paths observed every `factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid.steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(invalid(format!("coarsening factor {factor} does not divide {n} steps")));
        }
        let grid = TimeGrid::new(self.grid.horizon(), n / factor)?;
        let levels: Vec<f64> = (0..self.paths)
            .flat_map(|m| self.path_levels(m).iter().step_by(factor).copied())
            .collect();
        Self::from_levels(grid, self.seed, levels)
    }

    /// Copy of the ensemble whose increments with index `>= from[m]` are
    /// redrawn from an independent stream keyed by `seed`. Used to spot-check
    /// that stopping times and functionals ignore the future of a path.
    pub fn with_resampled_tail(&self, from: &[usize], seed: u64) -> Result<Self> {
        if from.len() != self.paths {
            return Err(invalid("tail index list must have one entry per path"));
        }
        let n = self.grid.steps();
        let sd = self.grid.dt().sqrt();
        let mut inc = self.increments.clone();
        inc.par_chunks_mut(n).enumerate().for_each(|(m, row)| {
            let start = from[m].min(n);
            let mut g = GaussianStream::at(seed, m as u64, start as u64);
            for d in &mut row[start..] {
                *d = sd * g.next_standard();
            }
        });
        Self::from_increments(self.grid, self.seed, inc)
    }

    /// Flat little-endian layout: `T: f64, N: u64, M: u64, seed: u64`, then
    /// the row-major increments as `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.grid.horizon().to_le_bytes())?;
        out.write_all(&(self.grid.steps() as u64).to_le_bytes())?;
        out.write_all(&(self.paths as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.increments.len() * 8);
        for d in &self.increments {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let horizon = f64::from_le_bytes(word);
        input.read_exact(&mut word)?;
        let steps = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let paths = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let seed = u64::from_le_bytes(word);
        let grid = TimeGrid::new(horizon, steps)?;
        let count = paths
            .checked_mul(steps)
            .ok_or_else(|| invalid("ensemble header overflows"))?;
        let mut raw = vec![0u8; count * 8];
        input.read_exact(&mut raw)?;
        let increments = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_increments(grid, seed, increments)
    }
}

/// Draws `M` paths with independent `N(0, dt)` increments. Path `m` depends
/// only on `(seed, m)`.
pub fn sample_ensemble(grid: &TimeGrid, paths: usize, seed: u64) -> Result<PathEnsemble> {
    if paths == 0 {
        return Err(invalid("ensemble needs at least one path"));
    }
    let n = grid.steps();
    let sd = grid.dt().sqrt();
    let mut inc = vec![0.0; paths * n];
    inc.par_chunks_mut(n).enumerate().for_each(|(m, row)| {
        let mut g = GaussianStream::new(seed, m as u64);
        for d in row.iter_mut() {
            *d = sd * g.next_standard();
        }
    });
    PathEnsemble::from_increments(*grid, seed, inc)
}

/// Grid-aligned bounded stopping time: `tau(omega_m) = t_{k[m]}`, `k[m] <= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTimeField {
    grid: TimeGrid,
    indices: Vec<usize>,
}

impl StoppingTimeField {
    pub fn new(grid: TimeGrid, indices: Vec<usize>) -> Result<Self> {
        if let Some(bad) = indices.iter().find(|&&k| k > grid.steps()) {
            return Err(invalid(format!(
                "stopping index {bad} exceeds grid size {}",
                grid.steps()
            )));
        }
        Ok(Self { grid, indices })
    }

    /// Deterministic time `t_index` on every path.
    pub fn constant(grid: TimeGrid, paths: usize, index: usize) -> Result<Self> {
        Self::new(grid, vec![index; paths])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn cap(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index(&self, m: usize) -> usize {
        self.indices[m]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn time(&self, m: usize) -> f64 {
        self.grid.time(self.indices[m])
    }

    pub fn times(&self) -> Vec<f64> {
        self.indices.iter().map(|&k| self.grid.time(k)).collect()
    }
}

/// `k[m] = min(N, first i with |W[m][i]| >= a)`.
pub fn first_exit_time(ensemble: &PathEnsemble, barrier: f64) -> Result<StoppingTimeField> {
    first_exit_time_monitored(ensemble, barrier, 1)
}

/// First exit observed only at grid indices that are multiples of `every`
/// (the final index `N` always caps the time).
pub fn first_exit_time_monitored(
    ensemble: &PathEnsemble,
    barrier: f64,
    every: usize,
) -> Result<StoppingTimeField> {
    if !(barrier.is_finite() && barrier > 0.0) {
        return Err(invalid(format!("exit barrier must be positive, got {barrier}")));
    }
    if every == 0 {
        return Err(invalid("monitoring stride must be at least 1"));
    }
    let n = ensemble.grid().steps();
    let indices = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let w = ensemble.path_levels(m);
            (0..=n)
                .step_by(every)
                .find(|&i| w[i].abs() >= barrier)
                .unwrap_or(n)
        })
        .collect();
    StoppingTimeField::new(*ensemble.grid(), indices)
}

/// `E[tau_a ∧ T]` for the continuously monitored exit of `|W|` from `(-a, a)`.
///
/// Integrating the survival series
/// `P(tau_a > t) = 4/pi * sum_n (-1)^n/(2n+1) * exp(-(2n+1)^2 pi^2 t / (8 a^2))`
/// gives `a^2 - 32 a^2/pi^3 * sum_n (-1)^n exp(-r_n T) / (2n+1)^3`; the
/// alternating tail is summed until its terms vanish.
pub fn expected_exit_time(barrier: f64, horizon: f64) -> f64 {
    use std::f64::consts::PI;
    let a2 = barrier * barrier;
    let mut tail = 0.0;
    for n in 0..10_000_000u64 {
        let k = (2 * n + 1) as f64;
        let rate = k * k * PI * PI / (8.0 * a2);
        let term = (-rate * horizon).exp() / (k * k * k);
        if term < 1e-18 {
            break;
        }
        tail += if n % 2 == 0 { term } else { -term };
    }
    a2 - 32.0 * a2 / PI.powi(3) * tail
}

/// Process values `X[m][i]` on a grid (row-major `M x (N+1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    grid: TimeGrid,
    paths: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn new(grid: TimeGrid, paths: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != paths * grid.len() {
            return Err(invalid(format!(
                "expected {} values for {paths} paths, got {}",
                paths * grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, paths, values })
    }

    /// `X[m][i] = f(m, i)`; `f` must only look at information up to `t_i`.
    pub fn from_fn<F>(grid: TimeGrid, paths: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let width = grid.len();
        let mut values = vec![0.0; paths * width];
        values
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(m, row)| {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = f(m, i);
                }
            });
        Self { grid, paths, values }
    }

    /// The driving Brownian motion itself.
    pub fn brownian(ensemble: &PathEnsemble) -> Self {
        Self {
            grid: *ensemble.grid(),
            paths: ensemble.paths(),
            values: ensemble.levels().to_vec(),
        }
    }

    pub fn constant(grid: TimeGrid, paths: usize, c: f64) -> Self {
        Self { grid, paths, values: vec![c; paths * grid.len()] }
    }

    /// Deterministic clock `X_t = t`.
    pub fn time(grid: TimeGrid, paths: usize) -> Self {
        Self::from_fn(grid, paths, |_, i| grid.time(i))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn value(&self, m: usize, i: usize) -> f64 {
        self.values[m * self.grid.len() + i]
    }

    pub fn path(&self, m: usize) -> &[f64] {
        let w = self.grid.len();
        &self.values[m * w..(m + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `X[m]` at an arbitrary time, linearly interpolated between grid points.
    pub fn sample_at(&self, m: usize, t: f64) -> Result<f64> {
        self.grid.interpolate(self.path(m), t).ok_or(Error::OutOfRange {
            path: m,
            time: t,
            horizon: self.grid.horizon(),
        })
    }
}

/// Left-point sums `sum_{i in [from, to)} X[m][i] dW[m][i]`; `from = None`
/// starts at index 0.
pub fn ito_integral(
    integrand: &AdaptedProcess,
    driver: &PathEnsemble,
    from: Option<&StoppingTimeField>,
    to: &StoppingTimeField,
) -> Result<Vec<f64>> {
    if integrand.grid() != driver.grid() || integrand.paths() != driver.paths() {
        return Err(invalid("integrand and driver live on different grids or path counts"));
    }
    if to.grid() != driver.grid() || to.len() != driver.paths() {
        return Err(invalid("upper stopping time does not match the driver"));
    }
    if let Some(f) = from {
        if f.grid() != driver.grid() || f.len() != driver.paths() {
            return Err(invalid("lower stopping time does not match the driver"));
        }
        if let Some(m) = (0..f.len()).find(|&m| f.index(m) > to.index(m)) {
            return Err(invalid(format!("lower stopping time exceeds upper one on path {m}")));
        }
    }
    Ok((0..driver.paths())
        .into_par_iter()
        .map(|m| {
            let lo = from.map_or(0, |f| f.index(m));
            let x = integrand.path(m);
            let dw = driver.path_increments(m);
            (lo..to.index(m)).map(|i| x[i] * dw[i]).sum()
        })
        .collect())
}

/// Running sums of squared increments, `QV[m][i] = sum_{l<i} (X[m][l+1]-X[m][l])^2`.
pub fn quadratic_variation(process: &AdaptedProcess) -> AdaptedProcess {
    let grid = *process.grid();
    let width = grid.len();
    let mut values = vec![0.0; process.paths() * width];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(m, row)| {
            let x = process.path(m);
            let mut acc = 0.0;
            for i in 0..grid.steps() {
                let d = x[i + 1] - x[i];
                acc += d * d;
                row[i + 1] = acc;
            }
        });
    AdaptedProcess { grid, paths: process.paths(), values }
}
