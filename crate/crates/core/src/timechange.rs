//! Per-path time changes `phi`, their inverses, and the objects they
//! transport: processes, stochastic integrals and the rescaled Brownian
//! motion `W~_s = ∫ h dW_{phi^{-1}}` with `h(s) = (d phi^{-1}(s)/ds)^{-1/2}`.
//!
//! `phi_prime(m, t)` is always evaluated at ORIGINAL time `t`; consumers that
//! need the slope at transformed time `s` compose with `phi_inverse`.
//!
//! The proportional change `phi(t) = t / tau` is applied pathwise. It is not
//! adapted before `tau` is revealed, so every transformation here is a
//! per-path identity rather than a statement about filtrations.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::paths::{AdaptedProcess, PathEnsemble, StoppingTimeField, TimeGrid};

type PathMap = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeChangeKind {
    Proportional,
    Custom,
}

#[derive(Clone)]
enum Repr {
    /// `phi(t) = t / scale[m]`, or `t * scale[m]` when inverted.
    Proportional { scale: Arc<[f64]>, inverted: bool },
    Custom {
        paths: usize,
        phi: PathMap,
        phi_prime: PathMap,
        phi_inverse: PathMap,
        inverted: bool,
    },
}

/// A strictly increasing `C^1` map of the time axis, one per path.
#[derive(Clone)]
pub struct TimeChange {
    repr: Repr,
}

impl fmt::Debug for TimeChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeChange")
            .field("kind", &self.kind())
            .field("paths", &self.paths())
            .field("inverted", &self.is_inverted())
            .finish()
    }
}

impl TimeChange {
    /// `phi(m, t) = t / scales[m]`.
    pub fn proportional(scales: Vec<f64>) -> Result<Self> {
        if let Some(m) = scales.iter().position(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::DegenerateHorizon { path: m });
        }
        Ok(Self {
            repr: Repr::Proportional { scale: scales.into(), inverted: false },
        })
    }

    /// A user-supplied change. `phi_prime` takes original time.
    pub fn custom<P, D, I>(paths: usize, phi: P, phi_prime: D, phi_inverse: I) -> Result<Self>
    where
        P: Fn(usize, f64) -> f64 + Send + Sync + 'static,
        D: Fn(usize, f64) -> f64 + Send + Sync + 'static,
        I: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        for m in 0..paths {
            if phi(m, 0.0).abs() > 1e-12 {
                return Err(invalid(format!("time change does not start at 0 on path {m}")));
            }
            if !(phi_prime(m, 0.0) > 0.0) {
                return Err(invalid(format!("time change slope is not positive on path {m}")));
            }
        }
        Ok(Self {
            repr: Repr::Custom {
                paths,
                phi: Arc::new(phi),
                phi_prime: Arc::new(phi_prime),
                phi_inverse: Arc::new(phi_inverse),
                inverted: false,
            },
        })
    }

    pub fn kind(&self) -> TimeChangeKind {
        match self.repr {
            Repr::Proportional { .. } => TimeChangeKind::Proportional,
            Repr::Custom { .. } => TimeChangeKind::Custom,
        }
    }

    pub fn paths(&self) -> usize {
        match &self.repr {
            Repr::Proportional { scale, .. } => scale.len(),
            Repr::Custom { paths, .. } => *paths,
        }
    }

    pub fn is_inverted(&self) -> bool {
        match self.repr {
            Repr::Proportional { inverted, .. } | Repr::Custom { inverted, .. } => inverted,
        }
    }

    /// `tau_m` of a (non-inverted) proportional change.
    pub fn horizon_scale(&self, m: usize) -> Option<f64> {
        match &self.repr {
            Repr::Proportional { scale, inverted: false } => Some(scale[m]),
            _ => None,
        }
    }

    /// All `tau_m` of a (non-inverted) proportional change.
    pub fn horizon_scales(&self) -> Option<Arc<[f64]>> {
        match &self.repr {
            Repr::Proportional { scale, inverted: false } => Some(scale.clone()),
            _ => None,
        }
    }

    pub fn phi(&self, m: usize, t: f64) -> f64 {
        match &self.repr {
            Repr::Proportional { scale, inverted: false } => t / scale[m],
            Repr::Proportional { scale, inverted: true } => t * scale[m],
            Repr::Custom { phi, inverted: false, .. } => phi(m, t),
            Repr::Custom { phi_inverse, inverted: true, .. } => phi_inverse(m, t),
        }
    }

    pub fn phi_inverse(&self, m: usize, s: f64) -> f64 {
        match &self.repr {
            Repr::Proportional { scale, inverted: false } => s * scale[m],
            Repr::Proportional { scale, inverted: true } => s / scale[m],
            Repr::Custom { phi_inverse, inverted: false, .. } => phi_inverse(m, s),
            Repr::Custom { phi, inverted: true, .. } => phi(m, s),
        }
    }

    pub fn phi_prime(&self, m: usize, t: f64) -> f64 {
        match &self.repr {
            Repr::Proportional { scale, inverted: false } => 1.0 / scale[m],
            Repr::Proportional { scale, inverted: true } => scale[m],
            Repr::Custom { phi_prime, inverted: false, .. } => phi_prime(m, t),
            Repr::Custom { phi_prime, phi_inverse, inverted: true, .. } => {
                1.0 / phi_prime(m, phi_inverse(m, t))
            }
        }
    }

    /// Checks `phi(0) = 0`, strict monotonicity, positive slope and the
    /// round trip `phi^{-1}(phi(t)) = t` at the given times on every path.
    pub fn check_invariants(&self, times: &[f64]) -> Result<()> {
        for m in 0..self.paths() {
            if self.phi(m, 0.0).abs() > 1e-12 {
                return Err(invalid(format!("phi(0) != 0 on path {m}")));
            }
            let mut prev = f64::NEG_INFINITY;
            for &t in times {
                let p = self.phi(m, t);
                if p <= prev {
                    return Err(invalid(format!("phi not increasing on path {m} at t = {t}")));
                }
                prev = p;
                if !(self.phi_prime(m, t) > 0.0) {
                    return Err(invalid(format!("phi' not positive on path {m} at t = {t}")));
                }
                let back = self.phi_inverse(m, p);
                if (back - t).abs() > 1e-12 * t.abs().max(1.0) {
                    return Err(invalid(format!("phi^-1(phi(t)) != t on path {m} at t = {t}")));
                }
            }
        }
        Ok(())
    }
}

/// `phi(m, t) = t / tau_m`, normalising every path's horizon to 1.
pub fn proportional_time_change(tau: &StoppingTimeField) -> Result<TimeChange> {
    if let Some(m) = tau.indices().iter().position(|&k| k == 0) {
        return Err(Error::DegenerateHorizon { path: m });
    }
    TimeChange::proportional(tau.times())
}

/// The inverse time change; `invert(&invert(c))` evaluates identically to `c`.
pub fn invert(change: &TimeChange) -> TimeChange {
    let repr = match &change.repr {
        Repr::Proportional { scale, inverted } => Repr::Proportional {
            scale: scale.clone(),
            inverted: !inverted,
        },
        Repr::Custom { paths, phi, phi_prime, phi_inverse, inverted } => Repr::Custom {
            paths: *paths,
            phi: phi.clone(),
            phi_prime: phi_prime.clone(),
            phi_inverse: phi_inverse.clone(),
            inverted: !inverted,
        },
    };
    TimeChange { repr }
}

/// `out[m][j] = X[m](phi^{-1}(m, s_j))` on `target`, linearly interpolated
/// (grid values are used on exact hits).
pub fn transport_process(
    process: &AdaptedProcess,
    change: &TimeChange,
    target: &TimeGrid,
) -> Result<AdaptedProcess> {
    if change.paths() != process.paths() {
        return Err(invalid("time change and process have different path counts"));
    }
    let width = target.len();
    let rows: Vec<Result<Vec<f64>>> = (0..process.paths())
        .into_par_iter()
        .map(|m| {
            (0..width)
                .map(|j| process.sample_at(m, change.phi_inverse(m, target.time(j))))
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(process.paths() * width);
    for r in rows {
        values.extend(r?);
    }
    AdaptedProcess::new(*target, process.paths(), values)
}

/// Rescaled, time-changed Brownian paths on the uniform grid of `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TransportedEnsemble {
    pub change: TimeChange,
    /// `W~` as a path ensemble on `[0, 1]` with `K` steps.
    pub paths: PathEnsemble,
}

impl TransportedEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        self.paths.grid()
    }

    pub fn level(&self, m: usize, j: usize) -> f64 {
        self.paths.level(m, j)
    }
}

/// `W~[m][j]` on `s_j = j / K`.
///
/// Proportional changes use the closed form `W(s_j tau_m) / sqrt(tau_m)`;
/// custom changes accumulate `h(s_j) * (W(phi^{-1}(s_{j+1})) - W(phi^{-1}(s_j)))`
/// with `h(s) = sqrt(phi'(phi^{-1}(s)))`.
pub fn transformed_brownian(
    ensemble: &PathEnsemble,
    change: &TimeChange,
    steps: usize,
) -> Result<TransportedEnsemble> {
    if change.paths() != ensemble.paths() {
        return Err(invalid("time change and ensemble have different path counts"));
    }
    let grid01 = TimeGrid::new(1.0, steps)?;
    let base = ensemble.grid();
    let width = grid01.len();
    let rows: Vec<Result<Vec<f64>>> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let w = ensemble.path_levels(m);
            let at = |s: f64| {
                let t = change.phi_inverse(m, s);
                base.interpolate(w, t).ok_or(Error::OutOfRange {
                    path: m,
                    time: t,
                    horizon: base.horizon(),
                })
            };
            let mut row = Vec::with_capacity(width);
            if let Some(tau) = change.horizon_scale(m) {
                let root = tau.sqrt();
                for j in 0..width {
                    row.push(at(grid01.time(j))? / root);
                }
            } else {
                row.push(0.0);
                let mut acc = 0.0;
                let mut prev = at(0.0)?;
                for j in 0..steps {
                    let s = grid01.time(j);
                    let h = change.phi_prime(m, change.phi_inverse(m, s)).sqrt();
                    let next = at(grid01.time(j + 1))?;
                    acc += h * (next - prev);
                    prev = next;
                    row.push(acc);
                }
            }
            Ok(row)
        })
        .collect();
    let mut levels = Vec::with_capacity(ensemble.paths() * width);
    for r in rows {
        levels.extend(r?);
    }
    Ok(TransportedEnsemble {
        change: change.clone(),
        paths: PathEnsemble::from_levels(grid01, ensemble.seed(), levels)?,
    })
}

/// Per-path `|∫_eta^xi X dM - ∫_{phi(eta)}^{phi(xi)} X~ dM~|` with
/// `M~ = M ∘ phi^{-1}` and `X~ = X ∘ phi^{-1}`.
#[derive(Debug, Clone)]
pub struct TransportDiscrepancy {
    pub original: Vec<f64>,
    pub transported: Vec<f64>,
    pub per_path: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

/// Evaluates both sides of the integral transport identity on coupled paths.
///
/// The left side is the left-point sum on the base grid over
/// `[eta_m, xi_m)`. The right side is the left-point sum over the partition
/// `{phi(eta_m)} ∪ {j/K in (phi(eta_m), phi(xi_m))} ∪ {phi(xi_m)}` of the
/// transformed axis, with both `X~` and `M~` read off the base grid.
pub fn verify_integral_transport(
    process: &AdaptedProcess,
    ensemble: &PathEnsemble,
    change: &TimeChange,
    eta: Option<&StoppingTimeField>,
    xi: &StoppingTimeField,
    steps: usize,
) -> Result<TransportDiscrepancy> {
    if steps == 0 {
        return Err(invalid("transformed grid needs at least one step"));
    }
    let original = crate::paths::ito_integral(process, ensemble, eta, xi)?;
    if change.paths() != ensemble.paths() {
        return Err(invalid("time change and ensemble have different path counts"));
    }
    let base = ensemble.grid();
    let transported: Vec<Result<f64>> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let w = ensemble.path_levels(m);
            let x = process.path(m);
            let sample = |row: &[f64], s: f64| {
                let t = change.phi_inverse(m, s);
                base.interpolate(row, t).ok_or(Error::OutOfRange {
                    path: m,
                    time: t,
                    horizon: base.horizon(),
                })
            };
            let lo = change.phi(m, eta.map_or(0.0, |e| e.time(m)));
            let hi = change.phi(m, xi.time(m));
            let mut points = vec![lo];
            let first = (lo * steps as f64).floor() as usize + 1;
            for j in first..=steps {
                let s = j as f64 / steps as f64;
                if s >= hi {
                    break;
                }
                if s > lo {
                    points.push(s);
                }
            }
            if hi > lo {
                points.push(hi);
            }
            let mut total = 0.0;
            for pair in points.windows(2) {
                let xt = sample(x, pair[0])?;
                let dm = sample(w, pair[1])? - sample(w, pair[0])?;
                total += xt * dm;
            }
            Ok(total)
        })
        .collect();
    let transported: Vec<f64> = transported.into_iter().collect::<Result<_>>()?;
    let per_path: Vec<f64> = original
        .iter()
        .zip(&transported)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let max = per_path.iter().cloned().fold(0.0, f64::max);
    let mean = crate::stats::mean(&per_path);
    Ok(TransportDiscrepancy { original, transported, per_path, max, mean })
}
