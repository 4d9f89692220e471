use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = anc_cli::Cli::parse();
    match anc_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
