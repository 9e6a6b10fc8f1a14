use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use ozlab_core::io::{load_json, load_tables, Q0File};
use ozlab_core::renewal::{curvature_report, solve_boundary, GeneratingFunction};
use ozlab_core::{OzError, Point};
use serde_json::json;

use crate::context::{parse_vector, Context};

#[derive(Subcommand)]
pub enum ShapesCommand {
    /// Boundary point, speed and principal curvatures of `{W_0 generating function = 1}`.
    Solve(SolveArgs),
    /// Chart and exact renewal value of a synthetic step law.
    Synthetic(SyntheticArgs),
}

#[derive(Args)]
pub struct SolveArgs {
    #[arg(long)]
    tables: PathBuf,
    /// Outward normal (default: the first axis).
    #[arg(long)]
    dir: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SyntheticArgs {
    /// Step law `{steps: [{y, p}], mass}`.
    #[arg(long)]
    q0: PathBuf,
    /// Overrides the mass stored in the step-law file.
    #[arg(long)]
    mass: Option<f64>,
    /// Distance along the axis at which `G` is evaluated exactly.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ShapesCommand {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        match self {
            ShapesCommand::Solve(a) => a.run(ctx),
            ShapesCommand::Synthetic(a) => a.run(ctx),
        }
    }
}

impl SolveArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let tables = load_tables(&self.tables)?;
        let gf = GeneratingFunction::new(&tables.w_0)?;
        let x = match &self.dir {
            Some(s) => parse_vector(s)?,
            None => Point::unit(gf.dim(), 0, 1).to_f64(),
        };
        if x.len() != gf.dim() {
            return Err(OzError::precondition(format!("direction has {} components but the tables live in Z^{}", x.len(), gf.dim())).into());
        }
        let chart = solve_boundary(&gf, &x)?;
        let config = json!({
            "command": "shapes solve", "tables": self.tables, "dir": x, "cutoff": tables.w_0.cutoff,
            "tolerances": chart.tolerances,
        });
        ctx.emit_json(self.out.as_deref(), &chart, config, None)?;
        curvature_report(&chart)?;
        Ok(())
    }
}

impl SyntheticArgs {
    fn run(&self, ctx: &Context) -> Result<()> {
        let mut q0: Q0File = load_json(&self.q0)?;
        if let Some(m) = self.mass {
            q0.mass = m;
        }
        let model = q0.model()?;
        let gf = GeneratingFunction::new(&model.w0())?;
        let chart = solve_boundary(&gf, &model.x_hat)?;
        let curvature = curvature_report(&chart);
        let target = Point::floor_of(&model.x_hat.iter().map(|v| v * self.n as f64 + 1e-9).collect::<Vec<_>>());
        let g = model.exact_g(&target)?;
        let d = model.x_hat.len() as f64;
        let prefactor = (g.log_value + target.dot(&model.t_hat())).exp() * (self.n as f64).powf((d - 1.0) / 2.0);
        let report = json!({
            "chart": chart,
            "target": target,
            "log_g": g.log_value,
            "oz_prefactor": prefactor,
        });
        let config = json!({
            "command": "shapes synthetic", "q0": self.q0, "mass": q0.mass, "n": self.n, "tolerances": chart.tolerances,
        });
        ctx.emit_json(self.out.as_deref(), &report, config, None)?;
        curvature?;
        Ok(())
    }
}
