use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ridesim_cli::{run, Command};

#[derive(Parser)]
#[command(name = "ridesim", version, about = "Driver acceptance simulation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `section.key=value` overrides applied after the file
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Read and clean a trip log
    Ingest(Common),
    /// Write a synthetic trip log from a known acceptance model
    Synth(Common),
    /// Fit ride distributions, the time profile and weekly goals
    Fit(Common),
    /// Draw rides from the fitted generator
    Generate(Common),
    /// Clone logged driver behaviour
    TrainBc(Common),
    /// Fine-tune the cloned agent in the simulator
    TrainRl(Common),
    /// Run replications and compare against the held-out week
    Evaluate(Common),
    /// Re-run train-rl and evaluate over one parameter
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, common) = match cli.command {
        Sub::Ingest(c) => (Command::Ingest, c),
        Sub::Synth(c) => (Command::Synth, c),
        Sub::Fit(c) => (Command::Fit, c),
        Sub::Generate(c) => (Command::Generate, c),
        Sub::TrainBc(c) => (Command::TrainBc, c),
        Sub::TrainRl(c) => (Command::TrainRl, c),
        Sub::Evaluate(c) => (Command::Evaluate, c),
        Sub::Sweep(c) => (Command::Sweep, c),
    };
    match run(command, common.config.as_deref(), &common.overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
