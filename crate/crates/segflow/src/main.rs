use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(segflow::cli::run(segflow::cli::Cli::parse()))
}
