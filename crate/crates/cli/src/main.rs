//! `ozlab`: command-line front end for the ozlab workbench.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod context;
mod decompose;
mod fluct;
mod ising;
mod perc;
mod qft;
mod saw;
mod shapes;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ozlab_core::{Budget, OzError};

use crate::context::Context;

/// Exit status for command-line usage errors.
const EXIT_USAGE: u8 = 64;
/// Exit status for refused inputs (preconditions, budgets, schemas).
const EXIT_REFUSED: u8 = 2;
/// Exit status for a violated identity or inequality.
const EXIT_VIOLATED: u8 = 3;

#[derive(Parser)]
#[command(name = "ozlab", version, about = "Ornstein-Zernike workbench for random-path models")]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Self-avoiding walk two-point functions.
    #[command(subcommand)]
    Saw(saw::SawCommand),
    /// Bernoulli bond percolation.
    #[command(subcommand)]
    Perc(perc::PercCommand),
    /// Exact Ising random-line checks.
    #[command(subcommand)]
    Ising(ising::IsingCommand),
    /// Irreducible weight tables.
    Decompose(decompose::DecomposeArgs),
    /// Equidecay shapes and curvature.
    #[command(subcommand)]
    Shapes(shapes::ShapesCommand),
    /// Conditioned-walk fluctuations.
    #[command(subcommand)]
    Fluct(fluct::FluctCommand),
    /// Mass shell of the renewal generating function.
    #[command(subcommand)]
    Qft(qft::QftCommand),
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let ctx = Context::new(std::env::args().collect(), Budget::from_env()?);
    match cli.command {
        Command::Saw(c) => c.run(&ctx),
        Command::Perc(c) => c.run(&ctx),
        Command::Ising(c) => c.run(&ctx),
        Command::Decompose(c) => c.run(&ctx),
        Command::Shapes(c) => c.run(&ctx),
        Command::Fluct(c) => c.run(&ctx),
        Command::Qft(c) => c.run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<OzError>() {
                Some(OzError::Violation(_)) => ExitCode::from(EXIT_VIOLATED),
                _ => ExitCode::from(EXIT_REFUSED),
            }
        }
    }
}
