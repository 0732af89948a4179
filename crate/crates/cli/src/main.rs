use std::io::Write;
use std::process::ExitCode;

use pdirac_cli::commands::is_usage_error;
use pdirac_cli::{run_args, write_outputs};

fn main() -> ExitCode {
    let (cli, outcome) = match run_args(std::env::args()) {
        Ok(v) => v,
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return ExitCode::from(clap_err.exit_code() as u8);
            }
            eprintln!("error: {e:#}");
            return ExitCode::from(if is_usage_error(&e) { 2 } else { 1 });
        }
    };
    for check in &outcome.checks {
        eprintln!("{check}");
    }
    match write_outputs(&cli, &outcome) {
        Ok(Some(body)) => {
            let _ = std::io::stdout().write_all(body.as_bytes());
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    }
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
