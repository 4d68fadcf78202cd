//! Pipeline driver behind the `spinalis` binary.
//!
//! `run_command` is the whole CLI as a function so tests can invoke
//! subcommands in-process and check exit codes: 0 success, 1 validation
//! error, 2 runtime (I/O) failure.

pub mod commands;
pub mod config;
pub mod corpus;

use clap::error::ErrorKind;
use clap::Parser;

pub use corpus::split_corpus;

/// Parse argv and execute. Never panics on user input.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match commands::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let config = match &cli.config {
        Some(path) => match config::PipelineConfig::load(path) {
            Ok(c) => c,
            Err(err) => {
                eprintln!("error: {err:#}");
                return 1;
            }
        },
        None => config::PipelineConfig::default(),
    };
    init_threads(cli.threads.or(config.threads));
    match commands::dispatch(cli, &config) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_runtime_failure(&err) {
                2
            } else {
                1
            }
        }
    }
}

fn is_runtime_failure(err: &anyhow::Error) -> bool {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return true;
        }
        if let Some(spinalis::Error::Io(_)) = cause.downcast_ref::<spinalis::Error>() {
            return true;
        }
    }
    false
}

/// Thread count: flag first, then SPINALIS_THREADS, then rayon's default.
fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("SPINALIS_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            // a second initialization in the same process is fine to ignore
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}
