//! `ovdbench` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid input or usage, 1 internal error.

mod args;
mod commands;
mod error;
mod manifest;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVDBENCH_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()
            .expect("thread pool");
        pool.install(|| commands::run(&cli.command))
    }));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("internal error: ovdbench hit a bug; please report it with the command line used");
            ExitCode::from(1)
        }
    }
}
