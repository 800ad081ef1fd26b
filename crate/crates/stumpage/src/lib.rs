//! IO, configuration and threading around `stumpage-core`, plus the
//! command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use exec::Parallel;

/// Pipeline stage selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveDp,
    Estimate,
    SolveBids,
    Counterfactual,
    Montecarlo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveDp => "solve-dp",
            Command::Estimate => "estimate",
            Command::SolveBids => "solve-bids",
            Command::Counterfactual => "counterfactual",
            Command::Montecarlo => "montecarlo",
        }
    }
}

/// Runs `command` on a pool of `config.threads` workers and returns the files written.
pub fn run(command: Command, config: &RunConfig) -> Result<commands::Artifacts> {
    let exec = Parallel::new(config.threads)?;
    match command {
        Command::SolveDp => commands::cmd_solve_dp(config),
        Command::Estimate => commands::cmd_estimate(config, &exec),
        Command::SolveBids => commands::cmd_solve_bids(config),
        Command::Counterfactual => commands::cmd_counterfactual(config, &exec),
        Command::Montecarlo => commands::cmd_montecarlo(config, &exec),
    }
}
