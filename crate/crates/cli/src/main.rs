//! `pilotwave` command line: run, validate, list and export.
//!
//! Exit status 0 means a certified run, 2 a completed run with diagnostics
//! (node events, leakage, failed statistics) and 1 any failure, including
//! usage errors.

mod export;
mod run;
mod source;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "pilotwave", version, about = "Pilot-wave trajectory ensembles for particles, spinors and field modes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct ScenarioArgs {
    /// Scenario file, or the name of a bundled preset.
    scenario: String,
    /// Replace `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Set a scenario key, e.g. `time.dt=0.005`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its artifacts and manifest.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Run directory (default `runs/<scenario name>`).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check a scenario without running it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// List the bundled presets.
    List,
    /// Reconstruct a physical field from a recorded field-beable trajectory.
    Export {
        /// Directory written by `run`.
        run_dir: PathBuf,
        #[arg(long, value_enum)]
        field: FieldArg,
        #[arg(long)]
        time: f64,
        /// Ensemble index of the recorded trajectory.
        #[arg(long, default_value_t = 0)]
        trajectory: usize,
        /// Lattice points per axis.
        #[arg(long, default_value_t = 16)]
        points: usize,
        /// Half-width of the cubic lattice box.
        #[arg(long, default_value_t = std::f64::consts::PI)]
        half: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output file (default standard output).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FieldArg {
    #[value(name = "A_T", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "E_T", alias = "e")]
    E,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run { scenario, output } => run::run(&scenario, output),
        Command::Validate { scenario } => run::validate(&scenario),
        Command::List => {
            run::list();
            Ok(0)
        }
        Command::Export { run_dir, field, time, trajectory, points, half, format, output } => {
            let request = export::Request { run_dir, field, time, trajectory, points, half, format, output };
            export::export(&request).map(|()| 0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
