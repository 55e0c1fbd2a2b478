// SPDX-License-Identifier: MIT OR Apache-2.0

mod commands;
mod failure;
mod options;
mod output;

use std::process::ExitCode;

use clap::Parser;

use failure::Failure;
use options::{Cli, Command};

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BiasScores(inv) => {
            let (common, args, config) = inv.resolve()?;
            commands::bias_scores(common, args, config)
        }
        Command::CounterStereotype(inv) => {
            let (common, args, config) = inv.resolve()?;
            commands::counter_stereotype(common, args, config)
        }
        Command::DebiasEval(inv) => {
            let (common, args, config) = inv.resolve()?;
            commands::debias_eval(common, args, config)
        }
        Command::Pppl(inv) => {
            let (common, args, config) = inv.resolve()?;
            commands::pppl(common, args, config)
        }
        Command::ExportFigures(inv) => {
            let (common, args, config) = inv.resolve()?;
            commands::export_figures(common, args, config)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            failure.exit_code()
        }
    }
}
