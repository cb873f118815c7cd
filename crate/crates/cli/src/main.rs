mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use sgsplat::Error;

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Contract(_) => 2,
        Error::Format(_) | Error::Corrupt { .. } => 3,
        Error::NoOverlap | Error::Numeric(_) => 4,
    }
}

fn threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("GS2D_THREADS").ok()?.parse().ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Encode(a) => commands::cmd_encode(a),
        Command::Decode(a) => commands::cmd_decode(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
