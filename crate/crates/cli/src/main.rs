//! `tuckerwatch` command-line pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{PipelineArgs, SynthArgs};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tuckerwatch",
    version,
    about = "Tucker3 anomaly and event detection over notification logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic log with ground truth.
    Synth(SynthArgs),
    /// Run every stage on a log.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        args: PipelineArgs,
    },
    /// Build the preprocessed feature tensor from a log.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        args: PipelineArgs,
    },
    /// ANOVA, scree selection and Tucker3 fit of the feature tensor.
    Decompose(PipelineArgs),
    /// Rank users from the fitted model.
    Rank(PipelineArgs),
    /// Project users onto the feature components.
    Trajectories(PipelineArgs),
    /// Ward clustering of trajectories and cluster centers.
    Cluster(PipelineArgs),
    /// Event windows on cluster centers.
    Events(PipelineArgs),
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => {
            let (cfg, out) = a.resolve()?;
            commands::synth(&cfg, &out)
        }
        Command::Pipeline { input, args } => commands::run_pipeline(&args.resolve(input)?),
        Command::Ingest { input, args } => commands::ingest(&args.resolve(input)?),
        Command::Decompose(a) => commands::decompose(&a.resolve(None)?),
        Command::Rank(a) => commands::rank(&a.resolve(None)?),
        Command::Trajectories(a) => commands::trajectories(&a.resolve(None)?),
        Command::Cluster(a) => commands::cluster(&a.resolve(None)?),
        Command::Events(a) => commands::events(&a.resolve(None)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
