//! `primswarm`: offline library builds, single plans, scenario runs and
//! timing sweeps.

mod bench;
mod library;
mod plan;
mod sim;

use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "primswarm", version, about = "Motion primitive swarm planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a primitive library and its occupancy relations.
    BuildLibrary(library::Args),
    /// Run one replanning step and print the selection.
    Plan(plan::Args),
    /// Simulate a scenario file and write the metrics.
    Sim(sim::Args),
    /// Time the collision checks and emit CSV.
    Bench(bench::Args),
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn config(e: impl Display) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<primswarm::Error> for Failure {
    fn from(e: primswarm::Error) -> Self {
        use primswarm::Error as E;
        match e {
            E::Config(_)
            | E::Toml(_)
            | E::Format { .. }
            | E::HashMismatch { .. }
            | E::Json(_)
            | E::Csv(_) => Failure::config(e),
            E::EmptyLibrary => Failure::Runtime(format!(
                "{e}: every (path, start speed) pair is infeasible under the dynamic limits"
            )),
            _ => Failure::runtime(e),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Creates the parent directory of an output file.
pub fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::BuildLibrary(a) => library::run(a),
        Command::Plan(a) => plan::run(a),
        Command::Sim(a) => sim::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
