//! JSON scenario schema. Unknown fields are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::solvers::RegressionBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub ensemble: EnsembleSpec,
    pub horizon: HorizonSpec,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub experiment: Experiment,
    /// CSV destination; `--out` takes precedence, stdout when neither is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonSpec {
    Constant {
        time: f64,
    },
    /// First grid time with `|W| >= barrier`, checked every `monitor_every`
    /// steps, capped at the grid horizon.
    FirstExit {
        barrier: f64,
        #[serde(default = "one")]
        monitor_every: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Zero {},
    Constant {
        value: f64,
    },
    /// `forcing + beta y + mu z`
    Linear {
        beta: f64,
        mu: f64,
        #[serde(default)]
        forcing: f64,
    },
    /// `alpha z^2`
    Quadratic {
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Constant { value: f64 },
    WTau {},
    TanhWTau {},
    WTauSquared {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Backward regression solve.
    Solve {
        #[serde(default)]
        basis: RegressionBasis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<ReferenceSpec>,
        #[serde(default)]
        tolerance: Tolerance,
    },
    /// Explicit formula for linear drivers, cross-checked by regression.
    LinearFormula {
        #[serde(default)]
        basis: RegressionBasis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<ReferenceSpec>,
        #[serde(default)]
        tolerance: Tolerance,
    },
    /// Direct stopped-horizon solve against transform, solve on `[0, 1]`, map back.
    TransformCheck {
        #[serde(default)]
        basis: RegressionBasis,
        transformed_steps: usize,
        #[serde(default = "two_route_tolerance")]
        tolerance: Tolerance,
    },
    MeasureSolution {
        #[serde(default)]
        basis: RegressionBasis,
        #[serde(default = "max_iters")]
        max_iters: usize,
        #[serde(default = "measure_tol")]
        tol: f64,
        #[serde(default = "probe_count")]
        probes: usize,
        #[serde(default = "two_route_tolerance")]
        tolerance: Tolerance,
    },
    /// Regression solves on coarsenings of one fine ensemble.
    Convergence {
        steps: Vec<usize>,
        #[serde(default)]
        basis: RegressionBasis,
        reference: ReferenceSpec,
    },
    /// Transformed Brownian motion and integral transport on the scenario grid.
    TimeChangeCheck {
        transformed_steps: usize,
    },
}

fn max_iters() -> usize {
    50
}

fn measure_tol() -> f64 {
    1e-3
}

fn probe_count() -> usize {
    5
}

pub fn two_route_tolerance() -> Tolerance {
    Tolerance { se_multiple: 3.0, relative: 0.02, absolute: 0.0, rule: ToleranceRule::Sum }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// A fixed value with its provenance.
    Value { value: f64, provenance: String },
    /// Cole-Hopf oracle on the same ensemble (quadratic driver only).
    ColeHopf {},
    /// Explicit linear formula on the same ensemble (linear driver only).
    LinearFormula {},
    /// Ensemble mean of the horizon.
    MeanHorizon {},
}

/// `|estimate - reference| <= combine(se_multiple * SE, relative * |reference|, absolute)`
/// with `SE` the sum of both standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    #[serde(default = "three")]
    pub se_multiple: f64,
    #[serde(default)]
    pub relative: f64,
    #[serde(default)]
    pub absolute: f64,
    #[serde(default)]
    pub rule: ToleranceRule,
}

fn three() -> f64 {
    3.0
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { se_multiple: 3.0, relative: 0.0, absolute: 0.0, rule: ToleranceRule::Max }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceRule {
    #[default]
    Max,
    Sum,
}

impl Tolerance {
    pub fn bound(&self, std_error: f64, reference: f64) -> f64 {
        let parts = [self.se_multiple * std_error, self.relative * reference.abs(), self.absolute];
        match self.rule {
            ToleranceRule::Max => parts.into_iter().fold(0.0, f64::max),
            ToleranceRule::Sum => parts.into_iter().sum(),
        }
    }

    pub fn accepts(&self, estimate: f64, std_error: f64, reference: f64) -> bool {
        (estimate - reference).abs() <= self.bound(std_error, reference)
    }
}

/// Parses a scenario; the error carries serde's line/column diagnostics.
pub fn parse_scenario(text: &str) -> Result<Scenario, String> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| e.to_string())?;
    validate(&scenario)?;
    Ok(scenario)
}

/// Cross-field checks that the type system cannot express.
pub fn validate(s: &Scenario) -> Result<(), String> {
    let fail = |field: &str, msg: String| Err(format!("{field}: {msg}"));
    if s.name.trim().is_empty() {
        return fail("name", "must not be empty".into());
    }
    if !(s.grid.horizon.is_finite() && s.grid.horizon > 0.0) {
        return fail("grid.horizon", format!("must be positive, got {}", s.grid.horizon));
    }
    if s.grid.steps == 0 {
        return fail("grid.steps", "must be at least 1".into());
    }
    if s.ensemble.paths < 2 {
        return fail("ensemble.paths", "needs at least 2 paths".into());
    }
    match s.horizon {
        HorizonSpec::Constant { time } if !(time > 0.0 && time <= s.grid.horizon) => {
            return fail("horizon.time", format!("must lie in (0, {}]", s.grid.horizon));
        }
        HorizonSpec::FirstExit { barrier, monitor_every } => {
            if !(barrier.is_finite() && barrier > 0.0) {
                return fail("horizon.barrier", format!("must be positive, got {barrier}"));
            }
            if monitor_every == 0 {
                return fail("horizon.monitor_every", "must be at least 1".into());
            }
        }
        _ => {}
    }
    let stopped = matches!(s.horizon, HorizonSpec::FirstExit { .. });
    let quadratic = matches!(s.driver, DriverSpec::Quadratic { .. });
    let linear = matches!(s.driver, DriverSpec::Linear { .. });
    let check_ref = |r: &ReferenceSpec| -> Result<(), String> {
        match r {
            ReferenceSpec::ColeHopf {} if !quadratic => Err("experiment.reference: cole_hopf needs a quadratic driver".into()),
            ReferenceSpec::LinearFormula {} if !linear => {
                Err("experiment.reference: linear_formula needs a linear driver".into())
            }
            ReferenceSpec::Value { provenance, .. } if provenance.trim().is_empty() => {
                Err("experiment.reference.provenance: must not be empty".into())
            }
            _ => Ok(()),
        }
    };
    match &s.experiment {
        Experiment::Solve { reference, .. } => {
            if let Some(r) = reference {
                check_ref(r)?;
            }
        }
        Experiment::LinearFormula { reference, .. } => {
            if !linear {
                return fail("driver.kind", "linear_formula needs a linear driver".into());
            }
            if let Some(r) = reference {
                check_ref(r)?;
            }
        }
        Experiment::TransformCheck { transformed_steps, .. } => {
            if !stopped {
                return fail("horizon.kind", "transform_check needs a first_exit horizon".into());
            }
            if *transformed_steps == 0 {
                return fail("experiment.transformed_steps", "must be at least 1".into());
            }
        }
        Experiment::MeasureSolution { max_iters, tol, .. } => {
            if !(quadratic || matches!(s.driver, DriverSpec::Zero {})) {
                return fail("driver.kind", "measure_solution needs a zero or quadratic driver".into());
            }
            if *max_iters == 0 || !(*tol > 0.0) {
                return fail("experiment", "max_iters and tol must be positive".into());
            }
        }
        Experiment::Convergence { steps, reference, .. } => {
            if steps.len() < 2 {
                return fail("experiment.steps", "needs at least two grid sizes".into());
            }
            if steps.windows(2).any(|w| w[0] >= w[1]) {
                return fail("experiment.steps", "must be strictly increasing".into());
            }
            let finest = *steps.last().expect("non-empty");
            if finest != s.grid.steps || steps.iter().any(|&n| n == 0 || finest % n != 0) {
                return fail(
                    "experiment.steps",
                    "each size must divide the finest, which must equal grid.steps".into(),
                );
            }
            if let HorizonSpec::FirstExit { monitor_every, .. } = s.horizon {
                if steps.iter().any(|&n| (finest / n) > 1 && monitor_every % (finest / n) != 0) {
                    return fail(
                        "horizon.monitor_every",
                        "must be a multiple of every coarsening factor".into(),
                    );
                }
            }
            check_ref(reference)?;
        }
        Experiment::TimeChangeCheck { transformed_steps } => {
            if !stopped {
                return fail("horizon.kind", "time_change_check needs a first_exit horizon".into());
            }
            if *transformed_steps == 0 {
                return fail("experiment.transformed_steps", "must be at least 1".into());
            }
        }
    }
    Ok(())
}
