use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = sqlnet::cli::Cli::parse();
    match sqlnet::cli::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
