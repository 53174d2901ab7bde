//! BSDE problem descriptions and the horizon-normalising transform.
//!
//! A problem `Y_t = xi - ∫_t^tau Z dW + ∫_t^tau f(s, Y, Z) ds` is moved to the
//! unit horizon by the proportional change `phi(t) = t / tau`:
//! `f~(s, y, z) = tau * f(s tau, y, z / sqrt(tau))`, and solutions come back
//! through `Y_t = y_{t/tau}`, `Z_t = z_{t/tau} / sqrt(tau)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::girsanov::FactoredDriver;
use crate::paths::{StoppingTimeField, TimeGrid};
use crate::solvers::{LinearDriverSpec, StepDiagnostics};
use crate::timechange::{TimeChange, TimeChangeKind};

/// Per-path information available to drivers at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathContext {
    pub path: usize,
    /// Driving Brownian level at the evaluation time, in the problem's own clock.
    pub w: f64,
}

type DriverFn = Arc<dyn Fn(f64, f64, f64, &PathContext) -> f64 + Send + Sync>;
type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    Zero,
    Linear,
    QuadraticInZ,
    Factored,
    Custom,
}

/// The generator `f(t, y, z)` of the `ds` integral.
#[derive(Clone)]
pub enum Driver {
    Zero,
    Constant(f64),
    Linear(LinearDriverSpec),
    /// `f = alpha * z^2`.
    Quadratic { alpha: f64 },
    /// `f = z * g(t, z)`.
    Factored(FactoredDriver),
    Custom(DriverFn),
    /// `tau_m * inner(s tau_m, y, z / sqrt(tau_m))`.
    TimeChanged { inner: Box<Driver>, scales: Arc<[f64]> },
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Driver::Zero => write!(f, "Zero"),
            Driver::Constant(c) => write!(f, "Constant({c})"),
            Driver::Linear(s) => write!(f, "Linear({s:?})"),
            Driver::Quadratic { alpha } => write!(f, "Quadratic {{ alpha: {alpha} }}"),
            Driver::Factored(d) => write!(f, "Factored({d:?})"),
            Driver::Custom(_) => write!(f, "Custom"),
            Driver::TimeChanged { inner, scales } => {
                write!(f, "TimeChanged {{ inner: {inner:?}, paths: {} }}", scales.len())
            }
        }
    }
}

impl Driver {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64, f64, f64, &PathContext) -> f64 + Send + Sync + 'static,
    {
        Driver::Custom(Arc::new(f))
    }

    pub fn kind(&self) -> DriverKind {
        match self {
            Driver::Zero => DriverKind::Zero,
            Driver::Constant(_) | Driver::Linear(_) => DriverKind::Linear,
            Driver::Quadratic { .. } => DriverKind::QuadraticInZ,
            Driver::Factored(_) => DriverKind::Factored,
            Driver::Custom(_) => DriverKind::Custom,
            Driver::TimeChanged { inner, .. } => inner.kind(),
        }
    }

    pub fn eval(&self, t: f64, y: f64, z: f64, ctx: &PathContext) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Constant(c) => *c,
            Driver::Linear(spec) => spec.eval(t, y, z, ctx),
            Driver::Quadratic { alpha } => alpha * z * z,
            Driver::Factored(d) => d.f(t, z, ctx),
            Driver::Custom(f) => f(t, y, z, ctx),
            Driver::TimeChanged { inner, scales } => {
                let tau = scales[ctx.path];
                let root = tau.sqrt();
                let inner_ctx = PathContext { path: ctx.path, w: ctx.w * root };
                tau * inner.eval(t * tau, y, z / root, &inner_ctx)
            }
        }
    }
}

/// Terminal value `xi`, evaluated on the stopped path `W[0..=k]`.
#[derive(Clone)]
pub enum TerminalCondition {
    Constant(f64),
    /// `W_tau`
    StoppedLevel,
    /// `tanh(W_tau)`
    TanhStoppedLevel,
    /// `W_tau^2`
    SquaredStoppedLevel,
    /// Arbitrary functional of the stopped path.
    Custom(TerminalFn),
    /// `inner` evaluated on `sqrt(tau_m) * W~`, which reproduces the original
    /// stopped level `W_tau`.
    TimeChanged { inner: Box<TerminalCondition>, scales: Arc<[f64]> },
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalCondition::Constant(c) => write!(f, "Constant({c})"),
            TerminalCondition::StoppedLevel => write!(f, "StoppedLevel"),
            TerminalCondition::TanhStoppedLevel => write!(f, "TanhStoppedLevel"),
            TerminalCondition::SquaredStoppedLevel => write!(f, "SquaredStoppedLevel"),
            TerminalCondition::Custom(_) => write!(f, "Custom"),
            TerminalCondition::TimeChanged { inner, .. } => write!(f, "TimeChanged({inner:?})"),
        }
    }
}

impl TerminalCondition {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TerminalCondition::Custom(Arc::new(f))
    }

    /// `stopped` is `W[m][0..=k_m]` on the grid the problem is posed on.
    pub fn eval(&self, path: usize, stopped: &[f64]) -> f64 {
        let last = *stopped.last().expect("stopped path holds at least W_0");
        match self {
            TerminalCondition::Constant(c) => *c,
            TerminalCondition::StoppedLevel => last,
            TerminalCondition::TanhStoppedLevel => last.tanh(),
            TerminalCondition::SquaredStoppedLevel => last * last,
            TerminalCondition::Custom(f) => f(stopped),
            TerminalCondition::TimeChanged { inner, scales } => {
                let root = scales[path].sqrt();
                match inner.as_ref() {
                    TerminalCondition::Custom(_) | TerminalCondition::TimeChanged { .. } => {
                        let scaled: Vec<f64> = stopped.iter().map(|w| w * root).collect();
                        inner.eval(path, &scaled)
                    }
                    _ => inner.eval(path, &[last * root]),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Horizon {
    /// Deterministic horizon; must coincide with a grid point.
    Constant(f64),
    Stopping(StoppingTimeField),
}

#[derive(Debug, Clone)]
pub struct BsdeProblem {
    pub driver: Driver,
    pub terminal: TerminalCondition,
    pub horizon: Horizon,
    /// Per-path `tau_m` of a transformed problem; exposes the original clock
    /// `s * tau_m` to regression bases.
    pub clock_scales: Option<Arc<[f64]>>,
}

impl BsdeProblem {
    pub fn new(driver: Driver, terminal: TerminalCondition, horizon: Horizon) -> Self {
        Self { driver, terminal, horizon, clock_scales: None }
    }

    /// Grid index of the horizon on every path.
    pub fn horizon_indices(&self, grid: &TimeGrid, paths: usize) -> Result<Vec<usize>> {
        match &self.horizon {
            Horizon::Constant(t) => {
                let k = grid.index_of(*t).ok_or_else(|| {
                    invalid(format!("horizon {t} is not a point of the grid (T = {})", grid.horizon()))
                })?;
                Ok(vec![k; paths])
            }
            Horizon::Stopping(field) => {
                if field.grid() != grid || field.len() != paths {
                    return Err(invalid("stopping time field does not match the ensemble"));
                }
                Ok(field.indices().to_vec())
            }
        }
    }
}

/// Per-path `(Y, Z)` on a grid, stored time-major (`[i][m]`).
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: TimeGrid,
    pub paths: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    /// Mean of `Y[·][0]`.
    pub y0: f64,
    pub y0_std_error: f64,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Solution {
    pub(crate) fn from_parts(
        grid: TimeGrid,
        paths: usize,
        y: Vec<f64>,
        z: Vec<f64>,
        y0_std_error: f64,
        diagnostics: Vec<StepDiagnostics>,
    ) -> Self {
        let y0 = crate::stats::mean(&y[..paths]);
        Self { grid, paths, y, z, y0, y0_std_error, diagnostics }
    }

    pub fn y(&self, m: usize, i: usize) -> f64 {
        self.y[i * self.paths + m]
    }

    pub fn z(&self, m: usize, i: usize) -> f64 {
        self.z[i * self.paths + m]
    }

    /// `Y[·][i]` across paths.
    pub fn y_column(&self, i: usize) -> &[f64] {
        &self.y[i * self.paths..(i + 1) * self.paths]
    }

    pub fn z_column(&self, i: usize) -> &[f64] {
        &self.z[i * self.paths..(i + 1) * self.paths]
    }

    pub fn y_path(&self, m: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.y(m, i)).collect()
    }

    pub fn z_path(&self, m: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.z(m, i)).collect()
    }
}

/// Moves a stopping-time problem to horizon 1 under the proportional change
/// built from the same `tau`.
pub fn to_constant_horizon(problem: &BsdeProblem, change: &TimeChange) -> Result<BsdeProblem> {
    let field = match &problem.horizon {
        Horizon::Stopping(f) => f,
        Horizon::Constant(_) => {
            return Err(invalid("problem already has a constant horizon"));
        }
    };
    if change.kind() != TimeChangeKind::Proportional {
        return Err(invalid("only proportional time changes are supported"));
    }
    let scales = change
        .horizon_scales()
        .ok_or_else(|| invalid("time change is inverted"))?;
    if scales.len() != field.len() {
        return Err(invalid("time change and stopping time have different path counts"));
    }
    if let Some(m) = (0..field.len()).find(|&m| (scales[m] - field.time(m)).abs() > 1e-12) {
        return Err(invalid(format!(
            "time change was built from a different stopping time (path {m})"
        )));
    }
    Ok(BsdeProblem {
        driver: Driver::TimeChanged {
            inner: Box::new(problem.driver.clone()),
            scales: scales.clone(),
        },
        terminal: TerminalCondition::TimeChanged {
            inner: Box::new(problem.terminal.clone()),
            scales: scales.clone(),
        },
        horizon: Horizon::Constant(1.0),
        clock_scales: Some(scales),
    })
}

/// Maps a unit-horizon solution back to the original clock on `grid`:
/// `Y_t = y_{phi(t)}`, `Z_t = z_{phi(t)} * phi'(t)^{1/2}`, frozen at
/// `(xi, 0)` from `tau_m` on.
pub fn map_solution_back(sol: &Solution, change: &TimeChange, grid: &TimeGrid) -> Result<Solution> {
    if change.paths() != sol.paths {
        return Err(invalid("time change and solution have different path counts"));
    }
    let unit = &sol.grid;
    if (unit.horizon() - 1.0).abs() > 1e-12 {
        return Err(invalid("solution is not posed on [0, 1]"));
    }
    let paths = sol.paths;
    let width = grid.len();
    let mut y = vec![0.0; width * paths];
    let mut z = vec![0.0; width * paths];
    let last = unit.steps();
    for m in 0..paths {
        let yp = sol.y_path(m);
        let zp = sol.z_path(m);
        let xi = yp[last];
        for i in 0..width {
            let t = grid.time(i);
            let s = change.phi(m, t);
            let (yv, zv) = if s >= 1.0 - 1e-12 {
                (xi, 0.0)
            } else {
                let yv = unit.interpolate(&yp, s).expect("s in [0, 1)");
                let zv = unit.interpolate(&zp, s).expect("s in [0, 1)");
                (yv, zv * change.phi_prime(m, t).sqrt())
            };
            y[i * paths + m] = yv;
            z[i * paths + m] = zv;
        }
    }
    Ok(Solution::from_parts(*grid, paths, y, z, sol.y0_std_error, Vec::new()))
}

/// Sample lattice for [`driver_invariance_check`].
#[derive(Debug, Clone)]
pub struct InvarianceLattice {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl InvarianceLattice {
    /// `n` evenly spaced points for `s in [0, 1]` and `z in [-3, 3]`, `y = 0`.
    pub fn uniform(n: usize) -> Self {
        let pts = |lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect()
        };
        Self { s: pts(0.0, 1.0), y: vec![0.0], z: pts(-3.0, 3.0) }
    }
}

/// `max |f~(s, y, z) - alpha z^2|` over the lattice and the given `tau` values,
/// where `f~` is the time-changed quadratic driver.
pub fn driver_invariance_check(alpha: f64, taus: &[f64], lattice: &InvarianceLattice) -> f64 {
    let transformed = Driver::TimeChanged {
        inner: Box::new(Driver::Quadratic { alpha }),
        scales: taus.to_vec().into(),
    };
    let mut worst: f64 = 0.0;
    for path in 0..taus.len() {
        for &s in &lattice.s {
            for &y in &lattice.y {
                for &z in &lattice.z {
                    let ctx = PathContext { path, w: 0.0 };
                    let d = (transformed.eval(s, y, z, &ctx) - alpha * z * z).abs();
                    worst = worst.max(d);
                }
            }
        }
    }
    worst
}
