use std::process::ExitCode;

use clap::Parser;
use cusp_response::cli::{configure_threads, exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    ExitCode::from(run(&cli))
}
