//! `harness`: run scenarios and write their curves.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xw_harness::sweep::{run_all, with_seeds};
use xw_harness::{builtin, builtins, emit_csv, makespan_oracle, ScenarioSpec};

#[derive(Parser)]
#[command(name = "harness", about = "Run deployment scenarios in virtual time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write execution_curve.csv and utilization.csv.
    Run {
        /// Scenario file, or the name of a built-in scenario.
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario once per seed in `first..first+count`.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        first: u64,
        #[arg(long, default_value_t = 8)]
        count: u64,
        /// One subdirectory per seed is created here.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the expected makespan of the homogeneous analogue of a scenario.
    Oracle {
        #[arg(long)]
        scenario: String,
    },
    /// List the built-in scenarios.
    List,
}

fn load(name: &str) -> Result<ScenarioSpec, String> {
    let path = Path::new(name);
    let spec = if path.exists() {
        ScenarioSpec::load(path)
    } else {
        builtin(name)
    };
    spec.map_err(|e| e.to_string())
}

fn oracle_text(spec: &ScenarioSpec) -> String {
    match makespan_oracle(&spec.homogeneous_analogue()) {
        Ok(d) => format!("{:.1} s", d.as_secs_f64()),
        Err(e) => format!("n/a ({e})"),
    }
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Run { scenario, seed, out } => {
            let mut spec = load(&scenario)?;
            if let Some(seed) = seed {
                spec = spec.with_seed(seed);
            }
            let m = xw_harness::run_scenario(&spec).map_err(|e| e.to_string())?;
            emit_csv(&m, &out).map_err(|e| e.to_string())?;
            println!(
                "{}: makespan {:.1} s, analogue oracle {}, {} completed, {} aborted",
                spec.name,
                m.makespan,
                oracle_text(&spec),
                m.completed,
                m.aborted
            );
        }
        Command::Sweep {
            scenario,
            first,
            count,
            out,
        } => {
            let spec = load(&scenario)?;
            let specs = with_seeds(&spec, first..first + count);
            for (s, result) in specs.iter().zip(run_all(&specs)) {
                let m = result.map_err(|e| e.to_string())?;
                emit_csv(&m, &out.join(format!("seed-{}", s.seed))).map_err(|e| e.to_string())?;
                println!(
                    "seed {}: makespan {:.1} s, {} completed, {} aborted",
                    s.seed, m.makespan, m.completed, m.aborted
                );
            }
        }
        Command::Oracle { scenario } => {
            let spec = load(&scenario)?;
            println!("{}", oracle_text(&spec));
        }
        Command::List => {
            for spec in builtins() {
                println!(
                    "{}\t{} workers\t{} tasks",
                    spec.name,
                    spec.pool_size(),
                    spec.workload.task_count
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    xw_common::init_logging();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
