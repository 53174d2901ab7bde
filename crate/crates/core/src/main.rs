use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bsde_timechange::cli::{self, RunOptions, BUILTINS};

#[derive(Parser)]
#[command(name = "bsde-tc", about = "Stopping-time BSDE experiments", version)]
struct Args {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the per-row summary on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a builtin scenario by name.
    Run { scenario: String },
    /// List builtin scenarios.
    List,
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(cli::exit::SCHEMA as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(cli::exit::NUMERICAL as u8);
        }
    }
    let code = match args.command {
        Command::Run { scenario } => {
            cli::run(&scenario, &RunOptions { out: args.out, quiet: args.quiet })
        }
        Command::List => {
            for (name, about, _) in BUILTINS {
                println!("{name:<28} {about}");
            }
            cli::exit::PASS
        }
        Command::Version => {
            println!("bsde-tc {}", env!("CARGO_PKG_VERSION"));
            cli::exit::PASS
        }
    };
    ExitCode::from(code as u8)
}
