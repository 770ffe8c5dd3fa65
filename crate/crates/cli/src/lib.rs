//! Command-line presets, report documents and the live service.

pub mod args;
pub mod commands;
pub mod report;
pub mod serve;

use std::fmt;

pub use args::{Cli, Command};
pub use commands::Outcome;

/// Flags that parse but describe an impossible run. Exits with status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Runs a batch subcommand. `serve` never returns an outcome.
pub fn execute(command: &Command) -> anyhow::Result<Vec<Outcome>> {
    match command {
        Command::Run(args) => commands::cmd_run(args),
        Command::Nosignal(args) => Ok(vec![commands::cmd_nosignal(args)?]),
        Command::RedsoxPhase1(args) => Ok(vec![commands::cmd_redsox_phase1(args)?]),
        Command::RedsoxPhase2(args) => Ok(vec![commands::cmd_redsox_phase2(args)?]),
        Command::Serve(args) => serve::cmd_serve(args).map(|()| Vec::new()),
    }
}
