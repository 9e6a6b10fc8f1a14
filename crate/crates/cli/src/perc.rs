use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::percolation::{simulate_connectivity, PercolationConfig};
use ozlab_core::{OzError, Point};
use serde_json::json;

use crate::context::{csv_string, join, Context};

#[derive(Subcommand)]
pub enum PercCommand {
    /// Monte Carlo estimate of `P(0 <-> x)` with Wilson intervals.
    Connectivity(ConnectivityArgs),
}

#[derive(Args)]
pub struct ConnectivityArgs {
    #[arg(long)]
    dim: usize,
    /// Bond parameter; bonds are open with probability `1 - exp(-beta)`.
    #[arg(long)]
    beta: f64,
    /// Target sites separated by `;`.
    #[arg(long)]
    x: String,
    #[arg(long)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    /// Half-width of the simulation box (default: 3 max |x_i|, at least 2).
    #[arg(long)]
    half_width: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PercCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            PercCommand::Connectivity(a) => a.run(ctx),
        }
    }
}

impl ConnectivityArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let xs = Point::parse_list(&self.x)?;
        if let Some(x) = xs.iter().find(|x| x.dim() != self.dim) {
            return Err(OzError::precondition(format!("{x} is not a point of Z^{}", self.dim)).into());
        }
        let hw = self.half_width.unwrap_or_else(|| PercolationConfig::default_half_width(&xs.iter().collect::<Vec<_>>()));
        let cfg = PercolationConfig::new(self.dim, self.beta, hw, self.seed)?;
        let mut rows = Vec::new();
        for x in &xs {
            let e = simulate_connectivity(x, &cfg, self.trials)?;
            rows.push(vec![join(&x.0, ","), e.p_hat.to_string(), e.ci_lo.to_string(), e.ci_hi.to_string(), e.trials.to_string()]);
        }
        let config = json!({
            "command": "perc connectivity", "dim": self.dim, "beta": self.beta, "x": self.x,
            "trials": self.trials, "seed": self.seed, "half_width": hw, "confidence": 0.95,
        });
        ctx.emit(self.out.as_deref(), &csv_string(&["x", "p_hat", "ci_lo", "ci_hi", "trials"], &rows)?, config, Some(self.seed))
    }
}
