use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use ozlab_core::decomposition::{
    build_saw_tables, mass_gap_measure, self_consistent_ising, self_consistent_saw, DEFAULT_DELTA, DEFAULT_K,
};
use ozlab_core::renewal::renewal_identity;
use ozlab_core::saw::SawEnsemble;
use ozlab_core::OzError;
use serde_json::json;

use crate::context::{parse_vector, Context};

/// Largest accepted log-domain error of the renewal identity under `--check`.
const IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, ValueEnum)]
pub enum Model {
    Saw,
    Ising,
}

impl Model {
    fn name(self) -> &'static str {
        match self {
            Model::Saw => "saw",
            Model::Ising => "ising",
        }
    }
}

/// Builds the `W`, `W_L`, `W_0`, `W_R` tables with a self-consistent cone.
#[derive(Args)]
pub struct DecomposeArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    /// Direction `x`, e.g. "1,0".
    #[arg(long)]
    dir: String,
    #[arg(long = "K", default_value_t = DEFAULT_K)]
    k: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    cutoff: usize,
    /// Ising only: sites added around each line's bounding box.
    #[arg(long, default_value_t = 1)]
    margin: usize,
    /// SAW only: re-join every decomposable walk and check the renewal identity.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

impl DecomposeArgs {
    pub fn run(&self, ctx: &Context) -> Result<()> {
        let x = parse_vector(&self.dir)?;
        let (spec, tables, report, mut summary) = match self.model {
            Model::Saw => {
                let ens = SawEnsemble::new(x.len(), self.beta, self.cutoff)?;
                let (spec, graded, report) = self_consistent_saw(&ens, &x, self.delta, self.k, &ctx.budget, self.max_iter)?;
                let mut summary = json!({});
                if self.check {
                    let checked = build_saw_tables(&ens, &spec, &ctx.budget, true)?;
                    let identity = renewal_identity(&checked);
                    summary = json!({
                        "reconstruction_failures": checked.reconstruction_failures,
                        "class_failures": checked.class_failures,
                        "renewal_log_error": identity.max_log_error,
                    });
                    if checked.reconstruction_failures + checked.class_failures > 0 || !(identity.max_log_error < IDENTITY_TOL) {
                        eprintln!("{summary}");
                        return Err(OzError::violation("decomposition is not a bijection at this cutoff").into());
                    }
                }
                (spec, graded.weight_tables(), report, summary)
            }
            Model::Ising => {
                let (spec, t, report) =
                    self_consistent_ising(self.beta, &x, self.delta, self.k, self.cutoff, self.margin, &ctx.budget, self.max_iter)?;
                let summary = json!({"margin": t.margin, "margin_change": t.margin_change});
                (spec, t.tables, report, summary)
            }
        };
        let gap = mass_gap_measure(&tables.w, spec.t_hat())?;
        summary["scales"] = json!(report.scales);
        summary["converged"] = json!(report.converged);
        summary["t_hat"] = json!(spec.t_hat());
        summary["mass_gap"] = json!(gap);
        let config = json!({
            "command": "decompose", "model": self.model.name(), "beta": self.beta, "dir": x,
            "K": self.k, "delta": self.delta, "cutoff": self.cutoff, "margin": self.margin,
            "break_factor": spec.break_factor, "sr_factor": spec.sr_factor, "max_iter": self.max_iter,
        });
        ctx.emit_json(Some(&self.out), &tables.into_vec(), config, None)?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
        Ok(())
    }
}
