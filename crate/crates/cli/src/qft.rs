use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::io::load_tables;
use ozlab_core::renewal::{solve_boundary, GeneratingFunction, FD_STEP};
use ozlab_core::spectral::{mass_shell, momentum_grid, Slices, DEFAULT_P_MAX, DEFAULT_P_STEPS};
use ozlab_core::{OzError, Point};
use serde_json::json;

use crate::context::{csv_string, join, Context};

#[derive(Subcommand)]
pub enum QftCommand {
    /// `omega(p)` from the pole of the generating function and from slice decay.
    Massshell(MassShellArgs),
}

#[derive(Args)]
pub struct MassShellArgs {
    #[arg(long)]
    tables: PathBuf,
    #[arg(long, default_value_t = DEFAULT_P_MAX)]
    p_max: f64,
    #[arg(long, default_value_t = DEFAULT_P_STEPS)]
    p_steps: usize,
    /// Last slice of the direct route; the fit window is its upper half.
    #[arg(long, default_value_t = 160)]
    n_max: usize,
    /// Skip the direct route.
    #[arg(long)]
    no_direct: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl QftCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            QftCommand::Massshell(a) => a.run(ctx),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MassShellArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let tables = load_tables(&self.tables)?;
        let gf = GeneratingFunction::new(&tables.w_0)?;
        if gf.dim() < 2 {
            return Err(OzError::precondition("the mass shell needs at least one transverse direction").into());
        }
        if self.n_max < 4 {
            return Err(OzError::precondition("n-max must be at least 4").into());
        }
        let chart = solve_boundary(&gf, &Point::unit(gf.dim(), 0, 1).to_f64())?;
        let slices = if self.no_direct { None } else { Some(Slices::from_renewal(&tables, self.n_max, &chart.t_hat)?) };
        let grid = momentum_grid(gf.dim() - 1, self.p_max, self.p_steps);
        let window = (self.n_max / 2, self.n_max);
        let shell = mass_shell(&gf, slices.as_ref(), &grid, window)?;
        let rows: Vec<Vec<String>> = shell
            .points
            .iter()
            .map(|s| vec![join(&s.p, " "), opt(s.omega_direct), s.omega_pole.to_string(), opt(s.residual)])
            .collect();
        let config = json!({
            "command": "qft massshell", "tables": self.tables, "cutoff": tables.w_0.cutoff, "p_max": self.p_max,
            "p_steps": self.p_steps, "window": [window.0, window.1], "fd_step": FD_STEP,
            "direct": !self.no_direct, "t_hat": chart.t_hat,
        });
        let csv = csv_string(&["p_components", "omega_direct", "omega_pole", "residual"], &rows)?;
        ctx.emit(self.out.as_deref(), &csv, config, None)
    }
}
