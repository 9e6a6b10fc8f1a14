use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::ising::{odd_odd_correlation, verify_representation, EdgeSet};
use ozlab_core::{OzError, Point};
use serde_json::json;

use crate::context::Context;

#[derive(Subcommand)]
pub enum IsingCommand {
    /// Random-line sum against the exact correlation in a box.
    Verify(VerifyArgs),
    /// `<s_A s_{B+x}>` with its Griffiths lower bound and connection split.
    OddOdd(OddOddArgs),
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Box of `W x H` sites, e.g. "3x3".
    #[arg(long = "box")]
    bx: String,
    #[arg(long)]
    beta: f64,
    /// Sites of `A` separated by `;`, e.g. "(0,0);(1,1)".
    #[arg(long = "A")]
    a: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OddOddArgs {
    #[arg(long = "box", default_value = "4x3")]
    bx: String,
    #[arg(long)]
    beta: f64,
    #[arg(long = "A")]
    a: String,
    #[arg(long = "B")]
    b: String,
    /// Translation applied to `B`.
    #[arg(long)]
    x: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl IsingCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            IsingCommand::Verify(a) => a.run(ctx),
            IsingCommand::OddOdd(a) => a.run(ctx),
        }
    }
}

impl VerifyArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let set = EdgeSet::parse_box(&self.bx)?;
        let a = Point::parse_list(&self.a)?;
        let r = verify_representation(&a, &set, self.beta, &ctx.budget)?;
        let config = json!({"command": "ising verify", "box": self.bx, "beta": self.beta, "A": self.a, "tolerance": r.tolerance});
        ctx.emit_json(self.out.as_deref(), &r, config, None)?;
        if !(r.max_abs_error <= r.tolerance) {
            return Err(OzError::violation(format!("random-line sum off by {} (tolerance {})", r.max_abs_error, r.tolerance)).into());
        }
        Ok(())
    }
}

impl OddOddArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let set = EdgeSet::parse_box(&self.bx)?;
        let (a, b) = (Point::parse_list(&self.a)?, Point::parse_list(&self.b)?);
        let x = Point::parse(&self.x)?;
        let r = odd_odd_correlation(&a, &b, &x, &set, self.beta, &ctx.budget)?;
        let config = json!({
            "command": "ising odd-odd", "box": self.bx, "beta": self.beta, "A": self.a, "B": self.b, "x": self.x,
            "tolerance": r.tolerance_used,
        });
        ctx.emit_json(self.out.as_deref(), &r, config, None)?;
        if !r.lower_bound_holds {
            return Err(OzError::violation(format!("Griffiths lower bound {} exceeds {}", r.lower_bound, r.value)).into());
        }
        Ok(())
    }
}
