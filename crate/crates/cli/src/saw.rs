use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::saw::{Census, SawEnsemble};
use ozlab_core::{OzError, Point};
use serde_json::json;

use crate::context::{csv_string, join, Context};

#[derive(Subcommand)]
pub enum SawCommand {
    /// Truncated two-point function `g(x)` by exhaustive enumeration.
    TwoPoint(TwoPointArgs),
}

#[derive(Args)]
pub struct TwoPointArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    /// Walk length cutoff.
    #[arg(long)]
    max_len: usize,
    /// Target sites separated by `;`, e.g. "3,0;2,1".
    #[arg(long)]
    x: String,
    /// Accept `beta >= 0`.
    #[arg(long)]
    allow_supercritical: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SawCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            SawCommand::TwoPoint(a) => a.run(ctx),
        }
    }
}

impl TwoPointArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let ens = if self.allow_supercritical {
            SawEnsemble::unchecked(self.dim, self.beta, self.max_len)?
        } else {
            SawEnsemble::new(self.dim, self.beta, self.max_len)?
        };
        let xs = Point::parse_list(&self.x)?;
        for x in &xs {
            if x.dim() != self.dim {
                return Err(OzError::precondition(format!("{x} is not a point of Z^{}", self.dim)).into());
            }
            if x.is_origin() {
                return Err(OzError::precondition("the two-point function is defined for x != 0").into());
            }
        }
        let census = Census::run(&ens, &ctx.budget, true)?;
        let rows: Vec<Vec<String>> = xs
            .iter()
            .map(|x| vec![join(&x.0, ","), census.log_two_point(x, self.beta).exp().to_string(), self.max_len.to_string()])
            .collect();
        let config = json!({"command": "saw two-point", "dim": self.dim, "beta": self.beta, "cutoff": self.max_len, "x": self.x});
        ctx.emit(self.out.as_deref(), &csv_string(&["x_coords", "g_value", "cutoff"], &rows)?, config, None)
    }
}
