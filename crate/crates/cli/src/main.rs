//! `uplift` command-line tool. Each run prints one JSON summary object to
//! stdout; diagnostics go to stderr. Exit codes: 0 success, 2 usage or
//! configuration error, 3 data or validation error, 4 numeric or fit error.

mod args;
mod commands;
mod config;
mod error;
mod model_file;
mod output;

use std::process::ExitCode;

use error::CliError;

fn run() -> Result<serde_json::Value, CliError> {
    let cli = config::parse(std::env::args_os().collect())?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    commands::dispatch(cli.command)
}

fn main() -> ExitCode {
    match run() {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => e.report(),
    }
}
