//! `llcaps`, the command-line surface of the enhancement pipeline.
//!
//! Five subcommands cover the workflow end to end: `degrade` synthesizes
//! low-light copies of clean images, `train` fits a model on synthetic
//! pairs, `enhance` pushes one image through a checkpoint, `eval` scores
//! a checkpoint over a directory, and `ablate` sweeps the component
//! on/off grid. Machine-readable data goes to files, diagnostics go to
//! stderr, and exit codes follow the usual convention: 0 on success, 2 on
//! usage or validation errors, 1 on runtime failures.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use llcaps::Error;

use commands::{AblateArgs, DegradeArgs, EnhanceArgs, EvalArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "llcaps", version, about = "Low-light image enhancement tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetically darkened copies of a directory of PPM images.
    Degrade(DegradeArgs),
    /// Train a model on synthetic low-light pairs built from clean images.
    Train(TrainArgs),
    /// Enhance one PPM image with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score a checkpoint over a directory and write a CSV report.
    Eval(EvalArgs),
    /// Train and score every on/off combination of wavelet, curve, diffusion.
    Ablate(AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Degrade(args) => commands::degrade(&args),
        Command::Train(args) => commands::train(&args),
        Command::Enhance(args) => commands::enhance(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Ablate(args) => commands::ablate(&args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::InvalidArgument(msg)) => {
            eprintln!("error: invalid argument: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
