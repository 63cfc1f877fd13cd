use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subdiff_cli::runner::{self, RunOptions};

#[derive(Parser)]
#[command(name = "subdiff", version, about = "Tagged-particle diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config or a manifest.json.
    Run {
        config: PathBuf,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: $SUBDIFF_THREADS, else all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config without running it and print the effective config.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            seed,
            threads,
            output_dir,
        } => runner::run(
            &config,
            &RunOptions {
                seed,
                threads,
                output_dir,
            },
        ),
        Command::Validate { config } => runner::validate(&config),
    };
    ExitCode::from(code)
}
