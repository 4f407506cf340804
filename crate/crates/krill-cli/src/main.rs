use std::process::ExitCode;

use clap::Parser;

mod commands;

use commands::Cli;

/// Exit codes: 0 success, 1 pipeline/task failure, 2 usage or validation
/// error (clap's own parse failures also exit with 2).
fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
