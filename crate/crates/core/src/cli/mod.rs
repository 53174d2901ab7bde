//! Scenario runner behind the `bsde-tc` binary.

pub mod builtins;
pub mod runner;
pub mod scenario;
pub mod table;

use std::path::{Path, PathBuf};

pub use builtins::{builtin, BUILTINS};
pub use runner::run_scenario;
pub use scenario::{parse_scenario, Scenario};
pub use table::{ResultRow, ResultTable};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAIL: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

/// Loads a scenario from a builtin name or a JSON file.
pub fn load(target: &str) -> Result<Scenario, String> {
    if let Some(text) = builtin(target) {
        return parse_scenario(text).map_err(|e| format!("builtin {target}: {e}"));
    }
    let text = std::fs::read_to_string(Path::new(target))
        .map_err(|e| format!("{target}: not a builtin scenario and not readable: {e}"))?;
    parse_scenario(&text).map_err(|e| format!("{target}: {e}"))
}

/// Runs `target` and returns the exit code. The table goes to `--out`, then
/// the scenario's `output`, then stdout.
pub fn run(target: &str, opts: &RunOptions) -> i32 {
    let scenario = match load(target) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::SCHEMA;
        }
    };
    let table = match run_scenario(&scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.name);
            return exit::NUMERICAL;
        }
    };
    let dest = opts.out.clone().or_else(|| scenario.output.as_ref().map(PathBuf::from));
    let written = match &dest {
        Some(p) => std::fs::write(p, table.to_csv()),
        None => table.write_csv(std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("error: writing results: {e}");
        return exit::NUMERICAL;
    }
    if !opts.quiet {
        for r in &table.rows {
            let verdict = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "INFO",
            };
            let se = r.std_error.map(|s| format!(" ± {s:.3e}")).unwrap_or_default();
            let reference = r.reference.map(|v| format!(" vs {v:.6}")).unwrap_or_default();
            eprintln!("{verdict} {} {}{se}{reference}", r.quantity, format_args!("{:.6}", r.estimate));
        }
    }
    if table.all_pass() {
        exit::PASS
    } else {
        exit::FAIL
    }
}
