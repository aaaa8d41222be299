mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::Cli;
use error::CliError;
use output::RunRecord;

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let start = Instant::now();
    let outcome = commands::run(&cli.command)?;
    let compute = start.elapsed();
    output::write_all(
        &cli.out_dir,
        &outcome.tables,
        RunRecord {
            subcommand: cli.command.name(),
            args: &cli.command,
            threads: rayon::current_num_threads(),
            compute,
            write: Default::default(),
        },
    )?;
    match outcome.deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twoaxis {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
