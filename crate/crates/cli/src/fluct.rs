use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::fluct::{bridge_sampler, variance_profile, BridgeDp, WINDOW_FACTOR};
use ozlab_core::io::{load_json, Q0File};
use ozlab_core::renewal::{solve_boundary, GeneratingFunction};
use ozlab_core::OzError;
use serde_json::json;

use crate::context::{csv_string, Context};

#[derive(Subcommand)]
pub enum FluctCommand {
    /// Exact-conditioned bridges and their variance profile against `kappa tau (1 - tau)`.
    Bridge(BridgeArgs),
}

#[derive(Args)]
pub struct BridgeArgs {
    #[arg(long)]
    q0: PathBuf,
    /// Bridge length along the axis.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Number of `tau` intervals.
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl FluctCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            FluctCommand::Bridge(a) => a.run(ctx),
        }
    }
}

impl BridgeArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let q0: Q0File = load_json(&self.q0)?;
        let model = q0.model()?;
        let axis = model
            .x_hat
            .iter()
            .position(|&v| v == 1.0)
            .filter(|_| model.x_hat.iter().filter(|&&v| v != 0.0).count() == 1)
            .ok_or_else(|| OzError::Unsupported("bridges are sampled along a positive coordinate axis".into()))?;
        if self.samples == 0 || self.grid == 0 {
            return Err(OzError::precondition("need at least one sample and one grid interval").into());
        }
        let chart = solve_boundary(&GeneratingFunction::new(&model.w0())?, &model.x_hat)?;
        let dp = BridgeDp::new(&q0.q0_table()?, axis, self.n, &ctx.budget)?;
        let batch = bridge_sampler(&dp, self.samples, self.grid, self.seed);
        if batch.endpoint_failures > 0 {
            return Err(OzError::violation(format!("{} bridges missed their endpoint", batch.endpoint_failures)).into());
        }
        let profile = variance_profile(&batch, &chart.kappas, &chart.directions, axis)?;
        let rows: Vec<Vec<String>> = profile
            .rows
            .iter()
            .map(|r| {
                vec![r.tau.to_string(), r.component.to_string(), r.empirical_var.to_string(), r.predicted_var.to_string(), r.stderr.to_string()]
            })
            .collect();
        let config = json!({
            "command": "fluct bridge", "q0": self.q0, "n": self.n, "samples": self.samples, "seed": self.seed,
            "grid": self.grid, "window_factor": WINDOW_FACTOR, "window": batch.window, "edge_mass": batch.edge_mass,
        });
        let csv = csv_string(&["tau", "component", "empirical_var", "predicted_var", "stderr"], &rows)?;
        ctx.emit(self.out.as_deref(), &csv, config, Some(self.seed))
    }
}
