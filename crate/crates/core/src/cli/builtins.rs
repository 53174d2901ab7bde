//! Scenarios shipped with the binary.

macro_rules! builtin_list {
    ($(($name:literal, $about:literal)),* $(,)?) => {
        /// `(name, description, json)` for every builtin scenario.
        pub const BUILTINS: &[(&str, &str, &str)] = &[
            $(($name, $about, include_str!(concat!("../../scenarios/", $name, ".json")))),*
        ];
    };
}

builtin_list![
    ("linear-gamma-check", "explicit linear formula, constant terminal, against exp(beta T)"),
    ("linear-drift-check", "explicit linear formula, terminal W_T, against mu T"),
    ("stopped-exit-time", "unit driver on a first-exit horizon, against the mean exit time"),
    ("stopped-optional-stopping", "zero driver with terminal W_tau, against 0"),
    ("squared-exit-compensated", "zero driver with terminal W_tau^2, against the mean exit time"),
    ("constant-terminal", "zero driver with constant terminal, exact"),
    ("quadratic-colehopf", "quadratic driver, tanh terminal, against Cole-Hopf"),
    ("quadratic-convergence", "regression error under grid refinement, quadratic driver"),
    ("transform-equivalence", "direct stopped solve against transformed unit-horizon solve"),
    ("measure-solution-quadratic", "Girsanov measure solution of a quadratic BSDE"),
    ("time-change-brownian", "transformed Brownian motion and integral transport"),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|b| b.0 == name).map(|b| b.2)
}
