//! The `ridesim` command line: config handling, artifact files and the
//! subcommands that chain them.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::Path;

use config::RunConfig;

/// Exit code 1 for bad input or configuration, 2 for failures at run time.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ridesim_core::Error> for CliError {
    fn from(e: ridesim_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Synth,
    Fit,
    Generate,
    TrainBc,
    TrainRl,
    Evaluate,
    Sweep,
}

pub fn run(command: Command, config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    match command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Generate => commands::generate(&cfg),
        Command::TrainBc => commands::train_bc_cmd(&cfg),
        Command::TrainRl => commands::train_rl_cmd(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Sweep => commands::sweep(&cfg),
    }
}
