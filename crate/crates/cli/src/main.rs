use std::process::ExitCode;

use clap::Parser;
use trajcon_cli::commands::{run, Cli, Status};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &mut std::io::stdout().lock()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
