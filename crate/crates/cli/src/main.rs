use std::process::ExitCode;

use clap::Parser;
use qeraser_cli::{execute, Cli, UsageError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(outcomes) => {
            let mut ok = true;
            for o in &outcomes {
                if o.all_pass {
                    println!("PASS {}", o.report.display());
                } else {
                    println!("FAIL {} (verdict failure, see report)", o.report.display());
                    ok = false;
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
