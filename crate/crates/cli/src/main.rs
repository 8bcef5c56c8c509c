use std::process::ExitCode;

use clap::Parser;
use projexp_cli::cli::{run, Cli};

fn main() -> ExitCode {
    // Usage errors exit 1; exit code 2 is reserved for an unreached target power.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
