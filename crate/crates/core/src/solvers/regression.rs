//! Least-squares projection onto functions of time-t information.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{chunked_sum, REDUCE_CHUNK};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisKind {
    /// Monomials `1, x, ..., x^degree` of the standardised state.
    Polynomial { degree: usize },
    /// Indicators of equal-count bins of the state.
    IndicatorBins { bins: usize },
}

/// Regression basis in the state `W_t` and, for transformed problems, the
/// original clock `s * tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    /// Degree of the clock terms (used only when a clock is supplied).
    #[serde(default = "default_clock_degree")]
    pub clock_degree: usize,
    /// Adds the state-clock product `x * u` when a clock is supplied.
    #[serde(default)]
    pub cross_terms: bool,
}

fn default_clock_degree() -> usize {
    2
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            kind: BasisKind::Polynomial { degree: 3 },
            clock_degree: 2,
            cross_terms: false,
        }
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self { kind: BasisKind::Polynomial { degree }, ..Self::default() }
    }

    pub fn bins(bins: usize) -> Self {
        Self { kind: BasisKind::IndicatorBins { bins }, ..Self::default() }
    }
}

/// Per-step record of the regression actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub active_paths: usize,
    pub columns: usize,
    pub condition_number: f64,
    /// The requested basis was singular or ill-conditioned and a smaller one was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
struct Standardizer {
    shift: f64,
    scale: f64,
}

impl Standardizer {
    fn fit(values: &[f64]) -> Option<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            None
        } else {
            Some(Self { shift: mean, scale: sd })
        }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    degree: usize,
    clock_degree: usize,
    cross: bool,
}

/// Fitted normal equations for one time step.
pub(crate) struct Projector {
    state: Option<Standardizer>,
    clock: Option<Standardizer>,
    layout: Layout,
    /// Interior bin edges and the column of each non-empty bin.
    bins: Option<(Vec<f64>, Vec<Option<usize>>)>,
    width: usize,
    chol: Cholesky<f64, Dyn>,
}

impl Projector {
    pub(crate) fn build(
        basis: &RegressionBasis,
        step: usize,
        time: f64,
        state: &[f64],
        clock: Option<&[f64]>,
    ) -> Result<(Self, StepDiagnostics)> {
        let n = state.len();
        if n == 0 {
            return Err(Error::SingularRegression { step });
        }
        let st = Standardizer::fit(state);
        let ck = clock.and_then(Standardizer::fit);
        let requested = Layout {
            degree: match basis.kind {
                BasisKind::Polynomial { degree } => degree,
                BasisKind::IndicatorBins { bins } => bins.max(1),
            },
            clock_degree: if ck.is_some() { basis.clock_degree } else { 0 },
            cross: basis.cross_terms && ck.is_some() && st.is_some(),
        };
        let requested = Layout {
            degree: if st.is_some() { requested.degree } else { 0 },
            ..requested
        };

        let mut candidates = vec![requested];
        let mut cur = requested;
        if cur.cross {
            cur.cross = false;
            candidates.push(cur);
        }
        while cur.degree > 0 {
            cur.degree -= 1;
            candidates.push(cur);
        }
        while cur.clock_degree > 0 {
            cur.clock_degree -= 1;
            candidates.push(cur);
        }

        for (attempt, layout) in candidates.into_iter().enumerate() {
            let bins = match basis.kind {
                BasisKind::IndicatorBins { .. } => Some(make_bins(state, st, layout.degree.max(1))),
                BasisKind::Polynomial { .. } => None,
            };
            let mut proj = Projector {
                state: st,
                clock: ck,
                layout,
                width: 0,
                bins,
                chol: Cholesky::new(DMatrix::<f64>::identity(1, 1)).expect("identity is SPD"),
            };
            proj.width = proj.columns();
            let p = proj.width;
            let sums = chunked_sum(n, p * p, |range, acc| {
                let mut row = vec![0.0; p];
                for r in range {
                    proj.row(state[r], clock.map_or(0.0, |c| c[r]), &mut row);
                    for a in 0..p {
                        let ra = row[a];
                        if ra == 0.0 {
                            continue;
                        }
                        for b in a..p {
                            acc[a * p + b] += ra * row[b];
                        }
                    }
                }
            });
            let gram = DMatrix::from_fn(p, p, |a, b| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                sums[lo * p + hi] / n as f64
            });
            let cond = condition_number(&gram);
            if !(cond.is_finite() && cond <= MAX_CONDITION) {
                continue;
            }
            let Some(chol) = Cholesky::new(gram) else { continue };
            proj.chol = chol;
            let diag = StepDiagnostics {
                step,
                time,
                active_paths: n,
                columns: p,
                condition_number: cond,
                fallback: attempt > 0,
            };
            return Ok((proj, diag));
        }
        Err(Error::SingularRegression { step })
    }

    fn columns(&self) -> usize {
        let state_cols = match &self.bins {
            Some((_, map)) => map.iter().filter(|c| c.is_some()).count(),
            None => 1 + self.layout.degree,
        };
        state_cols + self.layout.clock_degree + usize::from(self.layout.cross)
    }

    fn row(&self, x: f64, u: f64, out: &mut [f64]) {
        let xs = self.state.map_or(0.0, |s| s.apply(x));
        let us = self.clock.map_or(0.0, |s| s.apply(u));
        let mut c = 0;
        match &self.bins {
            Some((edges, map)) => {
                out[..map.iter().filter(|m| m.is_some()).count()].fill(0.0);
                let b = edges.partition_point(|&e| e <= x);
                // states off the fitting sample may land in an empty bin
                let col = map[b]
                    .or_else(|| (0..map.len()).filter_map(|j| map[j].map(|c| (j.abs_diff(b), c))).min().map(|p| p.1))
                    .expect("at least one populated bin");
                out[col] = 1.0;
                c += map.iter().filter(|m| m.is_some()).count();
            }
            None => {
                let mut p = 1.0;
                for _ in 0..=self.layout.degree {
                    out[c] = p;
                    p *= xs;
                    c += 1;
                }
            }
        }
        let mut p = us;
        for _ in 0..self.layout.clock_degree {
            out[c] = p;
            p *= us;
            c += 1;
        }
        if self.layout.cross {
            out[c] = xs * us;
        }
    }

    /// Fitted values of the projection of `target` (aligned with `state`).
    pub(crate) fn fit(&self, state: &[f64], clock: Option<&[f64]>, target: &[f64]) -> Vec<f64> {
        let coef = self.coefficients(state, clock, target);
        self.evaluate(&coef, state, clock)
    }

    /// Projection coefficients of `target`; a constant target is kept exact.
    pub(crate) fn coefficients(&self, state: &[f64], clock: Option<&[f64]>, target: &[f64]) -> Fitted {
        let n = state.len();
        if let Some(&first) = target.first() {
            if target.iter().all(|&t| t == first) {
                return Fitted::Constant(first);
            }
        }
        let p = self.width;
        let rhs = chunked_sum(n, p, |range, acc| {
            let mut row = vec![0.0; p];
            for r in range {
                self.row(state[r], clock.map_or(0.0, |c| c[r]), &mut row);
                let t = target[r];
                for a in 0..p {
                    acc[a] += row[a] * t;
                }
            }
        });
        let rhs = DVector::from_iterator(p, rhs.into_iter().map(|v| v / n as f64));
        Fitted::Basis(self.chol.solve(&rhs))
    }

    /// Evaluates fitted coefficients at arbitrary states.
    pub(crate) fn evaluate(&self, coef: &Fitted, state: &[f64], clock: Option<&[f64]>) -> Vec<f64> {
        let coef = match coef {
            Fitted::Constant(c) => return vec![*c; state.len()],
            Fitted::Basis(c) => c,
        };
        let p = self.width;
        let mut fitted = vec![0.0; state.len()];
        fitted
            .par_chunks_mut(REDUCE_CHUNK)
            .enumerate()
            .for_each(|(c, out)| {
                let mut row = vec![0.0; p];
                let lo = c * REDUCE_CHUNK;
                for (k, v) in out.iter_mut().enumerate() {
                    let r = lo + k;
                    self.row(state[r], clock.map_or(0.0, |c| c[r]), &mut row);
                    *v = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                }
            });
        fitted
    }
}

/// Coefficients produced by [`Projector::coefficients`].
#[derive(Debug, Clone)]
pub(crate) enum Fitted {
    Constant(f64),
    Basis(DVector<f64>),
}

fn make_bins(
    state: &[f64],
    st: Option<Standardizer>,
    bins: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    if st.is_none() || bins <= 1 {
        return (Vec::new(), vec![Some(0)]);
    }
    let mut sorted = state.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|b| sorted[b * n / bins]).collect();
    edges.dedup();
    let mut counts = vec![0usize; edges.len() + 1];
    for &x in state {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    let mut next = 0;
    let map = counts
        .iter()
        .map(|&c| {
            (c > 0).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (edges, map)
}

fn condition_number(gram: &DMatrix<f64>) -> f64 {
    let p = gram.nrows();
    let d: Vec<f64> = (0..p).map(|i| gram[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(p, p, |a, b| gram[(a, b)] / (d[a] * d[b]).sqrt());
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
