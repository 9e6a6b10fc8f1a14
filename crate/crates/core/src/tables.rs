//! Displacement-indexed weight tables and their length-graded refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{OzError, Result};
use crate::lattice::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableKind {
    #[serde(rename = "W")]
    W,
    #[serde(rename = "W_L")]
    WL,
    #[serde(rename = "W_0")]
    W0,
    #[serde(rename = "W_R")]
    WR,
    #[serde(rename = "Q_L")]
    QL,
    #[serde(rename = "Q_0")]
    Q0,
    #[serde(rename = "Q_R")]
    QR,
    #[serde(rename = "g")]
    G,
}

impl TableKind {
    /// Kind after tilting; `None` for kinds that are already tilted or have no tilted form.
    pub fn tilted(self) -> Option<TableKind> {
        match self {
            TableKind::WL => Some(TableKind::QL),
            TableKind::W0 => Some(TableKind::Q0),
            TableKind::WR => Some(TableKind::QR),
            _ => None,
        }
    }

    pub fn is_tilted(self) -> bool {
        matches!(self, TableKind::QL | TableKind::Q0 | TableKind::QR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    y: Point,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightTableRepr {
    kind: TableKind,
    #[serde(default)]
    tilt: Option<Vec<f64>>,
    cutoff: usize,
    entries: Vec<Entry>,
}

/// Finite map `displacement -> weight` with positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightTableRepr", into = "WeightTableRepr")]
pub struct WeightTable {
    pub kind: TableKind,
    pub tilt: Option<Vec<f64>>,
    pub cutoff: usize,
    entries: BTreeMap<Point, f64>,
}

impl TryFrom<WeightTableRepr> for WeightTable {
    type Error = OzError;

    fn try_from(r: WeightTableRepr) -> Result<Self> {
        if r.kind.is_tilted() != r.tilt.is_some() {
            return Err(OzError::Schema { field: "tilt".into(), message: "tilt must be present exactly for Q tables".into() });
        }
        let mut t = WeightTable::new(r.kind, r.cutoff);
        t.tilt = r.tilt;
        for e in r.entries {
            if !(e.w > 0.0 && e.w.is_finite()) {
                return Err(OzError::Schema { field: "entries.w".into(), message: format!("weight {} at {} is not positive", e.w, e.y) });
            }
            if t.entries.insert(e.y.clone(), e.w).is_some() {
                return Err(OzError::Schema { field: "entries.y".into(), message: format!("duplicate displacement {}", e.y) });
            }
        }
        if let Some(d) = t.dim() {
            if t.entries.keys().any(|y| y.dim() != d) || t.tilt.as_ref().is_some_and(|v| v.len() != d) {
                return Err(OzError::Schema { field: "entries.y".into(), message: "mixed dimensions".into() });
            }
        }
        Ok(t)
    }
}

impl From<WeightTable> for WeightTableRepr {
    fn from(t: WeightTable) -> Self {
        WeightTableRepr {
            kind: t.kind,
            tilt: t.tilt,
            cutoff: t.cutoff,
            entries: t.entries.into_iter().map(|(y, w)| Entry { y, w }).collect(),
        }
    }
}

impl WeightTable {
    pub fn new(kind: TableKind, cutoff: usize) -> Self {
        WeightTable { kind, tilt: None, cutoff, entries: BTreeMap::new() }
    }

    /// Adds `w` to the entry at `y`; non-positive contributions are ignored.
    pub fn add(&mut self, y: Point, w: f64) {
        if w > 0.0 {
            *self.entries.entry(y).or_insert(0.0) += w;
        }
    }

    pub fn get(&self, y: &Point) -> f64 {
        self.entries.get(y).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> &BTreeMap<Point, f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.keys().next().map(Point::dim)
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.entries.iter().map(|(y, &w)| (y, w))
    }

    /// Entrywise `e^{(t, y)} W(y)`, computed as `exp(log W + (t, y))`.
    ///
    /// Refuses tables that are already tilted and entries whose tilted value
    /// would overflow.
    pub fn tilt(&self, t: &[f64]) -> Result<WeightTable> {
        let kind = self
            .kind
            .tilted()
            .ok_or_else(|| OzError::precondition(format!("{:?} tables cannot be tilted", self.kind)))?;
        if let Some(d) = self.dim() {
            if d != t.len() {
                return Err(OzError::precondition("tilt vector has the wrong dimension"));
            }
        }
        let mut out = WeightTable::new(kind, self.cutoff);
        out.tilt = Some(t.to_vec());
        for (y, &w) in &self.entries {
            let e = w.ln() + y.dot(t);
            if e > 700.0 {
                return Err(OzError::precondition(format!("tilted weight at {y} overflows (log = {e:.1})")));
            }
            out.entries.insert(y.clone(), e.exp());
        }
        Ok(out)
    }

    /// Applies `f` to every displacement, merging collisions.
    pub fn map_displacements(&self, f: impl Fn(&Point) -> Point) -> WeightTable {
        let mut out = WeightTable { entries: BTreeMap::new(), ..self.clone() };
        for (y, &w) in &self.entries {
            out.add(f(y), w);
        }
        out
    }

    /// Largest relative difference between matching entries; missing entries count as 1.
    pub fn max_rel_diff(&self, other: &WeightTable) -> f64 {
        let mut worst: f64 = 0.0;
        for (y, &w) in &self.entries {
            let v = other.get(y);
            worst = worst.max(if v == 0.0 { 1.0 } else { (w - v).abs() / w.abs().max(v.abs()) });
        }
        for y in other.entries.keys() {
            if !self.entries.contains_key(y) {
                worst = worst.max(1.0);
            }
        }
        worst
    }
}

/// Weights keyed by `(displacement, length)`, so that convolutions can be
/// truncated at a total length exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradedTable {
    entries: BTreeMap<(Point, usize), f64>,
}

impl GradedTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, y: Point, len: usize, w: f64) {
        *self.entries.entry((y, len)).or_insert(0.0) += w;
    }

    pub fn get(&self, y: &Point, len: usize) -> f64 {
        self.entries.get(&(y.clone(), len)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, usize, f64)> {
        self.entries.iter().map(|((y, n), &w)| (y, *n, w))
    }

    pub fn merge(&mut self, other: &GradedTable) {
        for ((y, n), &w) in &other.entries {
            self.add(y.clone(), *n, w);
        }
    }

    /// Convolution keeping only terms with total length at most `cutoff`.
    pub fn convolve(&self, other: &GradedTable, cutoff: usize) -> GradedTable {
        let mut out = GradedTable::new();
        for ((y1, n1), &w1) in &self.entries {
            for ((y2, n2), &w2) in &other.entries {
                if n1 + n2 <= cutoff {
                    out.add(y1.add(y2), n1 + n2, w1 * w2);
                }
            }
        }
        out
    }

    /// Sum over lengths.
    pub fn collapse(&self, kind: TableKind, cutoff: usize) -> WeightTable {
        let mut t = WeightTable::new(kind, cutoff);
        for ((y, _), &w) in &self.entries {
            t.add(y.clone(), w);
        }
        t
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Largest relative difference over the union of keys.
    pub fn max_rel_diff(&self, other: &GradedTable) -> f64 {
        let mut worst: f64 = 0.0;
        let keys: std::collections::BTreeSet<&(Point, usize)> = self.entries.keys().chain(other.entries.keys()).collect();
        for k in keys {
            let a = self.entries.get(k).copied().unwrap_or(0.0);
            let b = other.entries.get(k).copied().unwrap_or(0.0);
            let scale = a.abs().max(b.abs());
            if scale > 0.0 {
                worst = worst.max((a - b).abs() / scale);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn json_roundtrip_and_schema() {
        let mut t = WeightTable::new(TableKind::W0, 5);
        t.add(p(&[1, 0]), 0.25);
        t.add(p(&[1, 1]), 0.125);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"kind\":\"W_0\"") && s.contains("\"entries\":[{\"y\":[1,0],\"w\":0.25}"));
        let back: WeightTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"kind":"W","cutoff":1,"entries":[{"y":[1],"w":-1.0}]}"#;
        assert!(serde_json::from_str::<WeightTable>(bad).is_err());
        let untilted_q = r#"{"kind":"Q_0","cutoff":1,"entries":[]}"#;
        assert!(serde_json::from_str::<WeightTable>(untilted_q).is_err());
    }

    #[test]
    fn zero_tilt_is_identity() {
        let mut t = WeightTable::new(TableKind::W0, 3);
        t.add(p(&[1, 0]), 0.3);
        t.add(p(&[2, -1]), 0.01);
        let q = t.tilt(&[0.0, 0.0]).unwrap();
        assert_eq!(q.kind, TableKind::Q0);
        assert!(q.max_rel_diff(&WeightTable { kind: TableKind::Q0, tilt: q.tilt.clone(), ..t.clone() }) < 1e-15);
        assert!(q.tilt(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn graded_convolution_respects_cutoff() {
        let mut a = GradedTable::new();
        a.add(p(&[1]), 1, 0.5);
        a.add(p(&[2]), 2, 0.25);
        let c = a.convolve(&a, 3);
        assert_eq!(c.get(&p(&[2]), 2), 0.25);
        assert_eq!(c.get(&p(&[3]), 3), 0.25);
        assert_eq!(c.get(&p(&[4]), 4), 0.0);
    }
}
