use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spectral_spde::cli::{self, Command, LoadedConfig};

#[derive(Parser)]
#[command(version, about = "Weak-order and invariant-measure experiments for the semi-implicit spectral Galerkin SPDE scheme")]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// CSV destination (default: the config's `output`, else stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Finite-time weak error over a step-size grid.
    WeakOrder,
    /// Ergodic averages and invariant-measure gaps.
    Invariant,
    /// Operator, dissipativity, contraction and moment checks.
    Diagnostics,
    /// Moment estimates at checkpoint steps.
    Moments,
    /// Shared-noise contraction probe.
    Contraction,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(config_path) = args.config else {
        return fail(cli::EXIT_CONFIG, "--config <path> is required");
    };
    let loaded = match LoadedConfig::load(&config_path, args.seed) {
        Ok(l) => l,
        Err(e) => return fail(cli::exit_code(&e), e),
    };
    let command = match args.command {
        Sub::WeakOrder => Command::WeakOrder,
        Sub::Invariant => Command::Invariant,
        Sub::Diagnostics => Command::Diagnostics,
        Sub::Moments => Command::Moments,
        Sub::Contraction => Command::Contraction,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return fail(cli::EXIT_CONFIG, "--workers must be ≥ 1");
        }
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail(cli::EXIT_CONFIG, e),
    };
    let table = match pool.install(|| cli::dispatch(command, &loaded)) {
        Ok(t) => t,
        Err(e) => return fail(cli::exit_code(&e), e),
    };

    let csv = table.to_csv(&loaded);
    match args.out.or_else(|| loaded.config.output.clone()) {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, csv.as_bytes()) {
                return fail(cli::EXIT_CONFIG, format!("cannot write {}: {e}", path.display()));
            }
        }
        None => {
            let _ = std::io::stdout().write_all(csv.as_bytes());
        }
    }
    for line in &table.summary {
        println!("{line}");
    }
    if table.failed {
        return fail(cli::EXIT_CHECK_FAILED, "acceptance check failed");
    }
    ExitCode::SUCCESS
}
