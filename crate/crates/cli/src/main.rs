mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Continual domain adaptation with gradient-regularized contrastive learning.
#[derive(Parser)]
#[command(name = "grcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (TOML, or a previous run's manifest.json).
    Run { config: PathBuf },
    /// Run several configurations over their seeds and tabulate ACC/BWT.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        /// Directory for comparison.csv (overridden by GRCL_OUTPUT_DIR).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also write every member run's artifacts under <dir>/runs.
        #[arg(long)]
        keep_runs: bool,
    },
    /// Write a preset domain sequence as CSV.
    Generate {
        #[arg(long)]
        preset: String,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// List the built-in domain sequences.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => commands::run(config),
        Command::Compare {
            configs,
            output_dir,
            keep_runs,
        } => commands::compare(configs, output_dir.as_deref(), *keep_runs),
        Command::Generate { preset, output } => commands::generate(preset, output),
        Command::Presets => {
            commands::presets();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grcl: {e}");
            e.exit_code()
        }
    }
}
