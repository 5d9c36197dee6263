//! `resalloc`: DER allocation and post-storm repair scheduling from the
//! command line.

mod run;

use std::process::ExitCode;

use clap::Parser;

use run::{Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("resalloc: {e}");
            ExitCode::from(match e {
                CliError::Input(_) | CliError::Output(_) => 2,
                CliError::Solver(_) => 3,
            })
        }
    }
}
