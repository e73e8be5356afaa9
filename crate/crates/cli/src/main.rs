use std::process::ExitCode;

use clap::Parser;
use planemerge_cli::{run, thread_cap, Cli, CliError, THREADS_ENV};

fn start(cli: Cli) -> Result<(), CliError> {
    let cap = thread_cap(std::env::var(THREADS_ENV).ok().as_deref())?;
    if let Some(n) = cap {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot set up {n} threads: {e}")))?;
    }
    run(cli)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match start(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
