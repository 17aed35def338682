use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bearing_formation::cli::{self, EXIT_USAGE};

/// Simulate and certify bearing-only circular formations.
///
/// Log verbosity is read from SIM_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "formation-sim", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario's feasibility without running it.
    Validate { file: PathBuf },
    /// Run one scenario and write trajectory, plot data and summary.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run even if the feasibility checks fail.
        #[arg(long)]
        force: bool,
    },
    /// Run every scenario matching a glob, in parallel.
    Batch {
        pattern: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute the convergence certificate of a saved trajectory.
    Certify { trajectory: PathBuf, file: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();

    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let mut stdout = io::stdout().lock();
    let result = match args.command {
        Command::Validate { file } => cli::cmd_validate(&file, &mut stdout),
        Command::Run { file, out, force } => cli::cmd_run(&file, &out, force, &mut stdout),
        Command::Batch { pattern, out, jobs } => cli::cmd_batch(&pattern, &out, jobs, &mut stdout),
        Command::Certify { trajectory, file } => cli::cmd_certify(&trajectory, &file, &mut stdout),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
