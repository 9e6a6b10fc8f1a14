//! File schemas: weight tables, step laws and charts.

use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decomposition::WeightTableSet;
use crate::error::{OzError, Result};
use crate::lattice::Point;
use crate::renewal::SyntheticStepModel;
use crate::tables::{TableKind, WeightTable};

pub fn load_json<T: DeserializeOwned>(path: &FsPath) -> Result<T> {
    parse_json(path, &std::fs::read_to_string(path)?)
}

fn parse_json<T: DeserializeOwned>(path: &FsPath, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| OzError::Schema {
        field: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn save_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads either an array of tables or a single table. A lone `W_0` table
/// is completed with `W = 0` and point masses at the origin for `W_L`, `W_R`.
pub fn load_tables(path: &FsPath) -> Result<WeightTableSet> {
    let text = std::fs::read_to_string(path)?;
    let tables: Vec<WeightTable> = if text.trim_start().starts_with('[') {
        parse_json(path, &text)?
    } else {
        vec![parse_json(path, &text)?]
    };
    if let [t] = tables.as_slice() {
        if t.kind == TableKind::W0 {
            let d = t.dim().ok_or_else(|| OzError::Schema { field: "entries".into(), message: "empty W_0 table".into() })?;
            let mut wl = WeightTable::new(TableKind::WL, 0);
            wl.add(Point::origin(d), 1.0);
            let mut wr = WeightTable::new(TableKind::WR, 0);
            wr.add(Point::origin(d), 1.0);
            return Ok(WeightTableSet { w: WeightTable::new(TableKind::W, 0), w_l: wl, w_0: t.clone(), w_r: wr });
        }
    }
    let set = WeightTableSet::from_vec(tables)?;
    let dims: Vec<usize> = [&set.w, &set.w_l, &set.w_0, &set.w_r].iter().filter_map(|t| t.dim()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(OzError::Schema { field: "entries.y".into(), message: "tables differ in dimension".into() });
    }
    Ok(set)
}

pub fn save_tables(path: &FsPath, set: &WeightTableSet) -> Result<()> {
    save_json(path, &set.clone().into_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q0Step {
    pub y: Point,
    pub p: f64,
}

/// Step law with its mass: `{steps: [{y, p}], mass}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q0File {
    pub steps: Vec<Q0Step>,
    pub mass: f64,
    /// Direction of the renewal axis; defaults to `e_1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hat: Option<Vec<f64>>,
}

impl Q0File {
    pub fn model(&self) -> Result<SyntheticStepModel> {
        let d = self.steps.first().map(|s| s.y.dim()).ok_or_else(|| OzError::Schema {
            field: "steps".into(),
            message: "no steps".into(),
        })?;
        let x_hat = self.x_hat.clone().unwrap_or_else(|| Point::unit(d, 0, 1).to_f64());
        SyntheticStepModel::new(self.steps.iter().map(|s| (s.y.clone(), s.p)).collect(), self.mass, &x_hat)
    }

    /// The tilted law `Q_0` as a table.
    pub fn q0_table(&self) -> Result<WeightTable> {
        let m = self.model()?;
        let mut t = WeightTable::new(TableKind::Q0, m.w0().cutoff);
        t.tilt = Some(m.t_hat());
        for s in &self.steps {
            t.add(s.y.clone(), s.p);
        }
        Ok(t)
    }

    pub fn lazy_walk(mass: f64) -> Self {
        let s = |a, b, p| Q0Step { y: Point(vec![a, b]), p };
        Q0File { steps: vec![s(1, 0, 0.5), s(1, 1, 0.25), s(1, -1, 0.25)], mass, x_hat: None }
    }
}
