//! Break points, irreducible splitting of connection paths and the weight
//! tables of the irreducible classes.
//!
//! A site `u_l` (`0 < l < m`) of `lambda = (u_0, ..., u_m)` is a break point when
//! A) `(u_j, x) < (u_l, x) < (u_i, x)` for all `j < l < i`, and
//! B) every later site lies in `r_B U(u_l) + C`, where `C` is the forward cone
//! around `t` and `r_B = break_factor * K`.
//!
//! Irreducible paths (no break points) fall into `S_L` (every site before the
//! endpoint is strictly behind it along `x`), `S_R` (every site after the start
//! is strictly ahead of it and the path stays in `r_R U(u_0) + C` with
//! `r_R = sr_factor * K`) and `S_0 = S_L ∩ S_R`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::budget::Budget;
use crate::error::{OzError, Result};
use crate::ising::{is_admissible_path, q_weight, EdgeSet, PathFamily, ZCalc};
use crate::lattice::{ConeSpec, Path, Point};
use crate::norm::Norm;
use crate::renewal::solve_ray;
use crate::saw::{enumerate_saws, Census, SawEnsemble, Walk, WalkVisitor};
use crate::tables::{GradedTable, TableKind, WeightTable};

pub const DEFAULT_K: f64 = 2.0;
pub const DEFAULT_DELTA: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct BreakSpec {
    pub x_hat: Vec<f64>,
    pub cone: ConeSpec,
    /// Radius factor of condition B, in units of `K`.
    pub break_factor: f64,
    /// Radius factor of the `S_R` confinement, in units of `K`.
    pub sr_factor: f64,
}

/// Relative tolerance on the duality relation `(t, x) = xi(x)`.
pub const DUALITY_TOL: f64 = 1e-6;

impl BreakSpec {
    /// Both confinement radii default to `2K`; with `sr_factor = 1` the
    /// decomposition stops being a bijection (see the tests).
    pub fn new(x_hat: &[f64], t_hat: Vec<f64>, delta: f64, k: f64, xi: Norm) -> Result<Self> {
        let n = x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) || x_hat.len() != t_hat.len() {
            return Err(OzError::precondition("x_hat must be a nonzero vector matching t_hat in dimension"));
        }
        let x_hat: Vec<f64> = x_hat.iter().map(|v| v / n).collect();
        let cone = ConeSpec::new(t_hat, delta, k, xi)?;
        let spec = BreakSpec { x_hat, cone, break_factor: 2.0, sr_factor: 2.0 };
        let xi_x = spec.cone.xi.eval(&spec.x_hat);
        if spec.duality_gap() > DUALITY_TOL * xi_x.max(1.0) {
            return Err(OzError::precondition(format!(
                "(t, x) = {} differs from xi(x) = {xi_x}",
                dot(&spec.cone.t_hat, &spec.x_hat)
            )));
        }
        Ok(spec)
    }

    /// Scaled Euclidean norm `xi(y) = s |y|` with its dual point `t = s x_hat`.
    pub fn euclidean(x_hat: &[f64], s: f64, delta: f64, k: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(OzError::precondition(format!("norm scale {s} must be positive")));
        }
        let n = x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = x_hat.iter().map(|v| s * v / n).collect();
        Self::new(x_hat, t, delta, k, Norm::euclidean(s))
    }

    pub fn with_factors(mut self, break_factor: f64, sr_factor: f64) -> Self {
        self.break_factor = break_factor;
        self.sr_factor = sr_factor;
        self
    }

    pub fn dim(&self) -> usize {
        self.x_hat.len()
    }

    pub fn duality_gap(&self) -> f64 {
        (dot(&self.cone.t_hat, &self.x_hat) - self.cone.xi.eval(&self.x_hat)).abs()
    }

    pub fn t_hat(&self) -> &[f64] {
        &self.cone.t_hat
    }

    pub fn k(&self) -> f64 {
        self.cone.k
    }

    pub fn delta(&self) -> f64 {
        self.cone.delta
    }

    fn proj(&self, c: &[f64]) -> f64 {
        dot(c, &self.x_hat)
    }

    fn within(&self, from: &[f64], to: &[f64], factor: f64, scratch: &mut Vec<f64>) -> bool {
        scratch.clear();
        scratch.extend(to.iter().zip(from).map(|(a, b)| a - b));
        self.cone.in_fattened(scratch, factor * self.cone.k)
    }
}

/// Projections closer than this count as ties, so that lattice sites with
/// equal exact projection compare equal whatever the rounding of `x_hat`.
const PROJ_TOL: f64 = 1e-9;

fn ahead(a: f64, b: f64) -> bool {
    b > a + PROJ_TOL
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Remaining lines attached to the endpoints in the odd-odd setting.
#[derive(Debug, Clone, Copy)]
pub struct Attachments<'a> {
    /// Sites of the lines pairing the rest of `A`.
    pub gamma_a: &'a [Point],
    /// Sites of the lines pairing the rest of `B + x`.
    pub gamma_b: &'a [Point],
}

/// Sites as rows of `f64` coordinates.
fn coords_of(path: &Path) -> Vec<Vec<f64>> {
    path.sites().iter().map(Point::to_f64).collect()
}

fn break_points_coords(pts: &[Vec<f64>], spec: &BreakSpec) -> Vec<usize> {
    let m = pts.len() - 1;
    if m < 2 {
        return Vec::new();
    }
    let proj: Vec<f64> = pts.iter().map(|c| spec.proj(c)).collect();
    let mut suffix_min = vec![f64::INFINITY; m + 2];
    for i in (0..=m).rev() {
        suffix_min[i] = suffix_min[i + 1].min(proj[i]);
    }
    let mut out = Vec::new();
    let mut prefix_max = proj[0];
    let mut scratch = Vec::with_capacity(spec.dim());
    for l in 1..m {
        let a = ahead(prefix_max, proj[l]) && ahead(proj[l], suffix_min[l + 1]);
        prefix_max = prefix_max.max(proj[l]);
        if a && pts[l + 1..].iter().all(|u| spec.within(&pts[l], u, spec.break_factor, &mut scratch)) {
            out.push(l);
        }
    }
    out
}

/// Indices `l` of the break points of `lambda`, ascending.
///
/// With attachments, a break point must also separate the lines: every site of
/// `gamma_a` lies strictly behind it, every site of `gamma_b` strictly ahead of
/// it and inside `r_B U(u_l) + C`.
pub fn find_break_points(lambda: &Path, spec: &BreakSpec, attachments: Option<&Attachments<'_>>) -> Vec<usize> {
    let pts = coords_of(lambda);
    let mut bps = break_points_coords(&pts, spec);
    if let Some(att) = attachments {
        let a: Vec<Vec<f64>> = att.gamma_a.iter().map(Point::to_f64).collect();
        let b: Vec<Vec<f64>> = att.gamma_b.iter().map(Point::to_f64).collect();
        let mut scratch = Vec::new();
        bps.retain(|&l| {
            let pl = spec.proj(&pts[l]);
            a.iter().all(|s| ahead(spec.proj(s), pl))
                && b.iter()
                    .all(|s| ahead(pl, spec.proj(s)) && spec.within(&pts[l], s, spec.break_factor, &mut scratch))
        });
    }
    bps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PathClass {
    /// In `S_L` but not `S_R`.
    Left,
    /// In `S_R` but not `S_L`.
    Right,
    /// In `S_0 = S_L ∩ S_R`.
    Zero,
    /// Has a break point.
    Reducible,
    /// Irreducible but in none of the classes.
    Unclassified,
}

impl PathClass {
    pub fn in_left(self) -> bool {
        matches!(self, PathClass::Left | PathClass::Zero)
    }

    pub fn in_right(self) -> bool {
        matches!(self, PathClass::Right | PathClass::Zero)
    }

    pub fn is_irreducible(self) -> bool {
        self != PathClass::Reducible
    }
}

fn classify_coords(pts: &[Vec<f64>], spec: &BreakSpec, has_break: bool) -> PathClass {
    if has_break {
        return PathClass::Reducible;
    }
    let m = pts.len() - 1;
    if m == 0 {
        return PathClass::Unclassified;
    }
    let proj: Vec<f64> = pts.iter().map(|c| spec.proj(c)).collect();
    let left = proj[..m].iter().all(|&p| ahead(p, proj[m]));
    let mut scratch = Vec::with_capacity(spec.dim());
    let right = proj[1..].iter().all(|&p| ahead(proj[0], p))
        && pts[1..].iter().all(|u| spec.within(&pts[0], u, spec.sr_factor, &mut scratch));
    match (left, right) {
        (true, true) => PathClass::Zero,
        (true, false) => PathClass::Left,
        (false, true) => PathClass::Right,
        (false, false) => PathClass::Unclassified,
    }
}

pub fn classify(lambda: &Path, spec: &BreakSpec) -> PathClass {
    let pts = coords_of(lambda);
    let has_break = !break_points_coords(&pts, spec).is_empty();
    classify_coords(&pts, spec, has_break)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrreducibleDecomposition {
    pub lambda_l: Path,
    pub middles: Vec<Path>,
    pub lambda_r: Path,
    /// Break-point indices in the original path.
    pub break_points: Vec<usize>,
    /// Fewer than two break points: `lambda_l` is the whole path and
    /// `lambda_r` is its endpoint.
    pub degenerate: bool,
}

impl IrreducibleDecomposition {
    pub fn m(&self) -> usize {
        self.middles.len()
    }

    pub fn pieces(&self) -> Vec<&Path> {
        std::iter::once(&self.lambda_l).chain(&self.middles).chain(std::iter::once(&self.lambda_r)).collect()
    }

    pub fn reconstruct(&self) -> Path {
        let mut sites = self.lambda_l.sites().to_vec();
        for p in self.middles.iter().chain(std::iter::once(&self.lambda_r)) {
            sites.extend_from_slice(&p.sites()[1..]);
        }
        Path::new(sites).expect("pieces join at shared sites")
    }

    /// Piece displacements `V_L, V_1, ..., V_M, V_R`.
    pub fn displacements(&self) -> Vec<Point> {
        self.pieces().iter().map(|p| p.displacement()).collect()
    }
}

/// Cuts `gamma` at the given site indices.
pub fn split_at(gamma: &Path, cuts: &[usize]) -> Vec<Path> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut from = 0;
    for &c in cuts.iter().chain(std::iter::once(&gamma.len())) {
        out.push(gamma.slice(from, c));
        from = c;
    }
    out
}

/// Cuts `gamma` at all of its break points.
pub fn decompose(gamma: &Path, spec: &BreakSpec) -> IrreducibleDecomposition {
    let bps = find_break_points(gamma, spec, None);
    if bps.len() < 2 {
        return IrreducibleDecomposition {
            lambda_l: gamma.clone(),
            middles: Vec::new(),
            lambda_r: Path::single(gamma.end().clone()),
            break_points: bps,
            degenerate: true,
        };
    }
    let mut pieces = split_at(gamma, &bps);
    let lambda_r = pieces.pop().unwrap();
    let lambda_l = pieces.remove(0);
    IrreducibleDecomposition { lambda_l, middles: pieces, lambda_r, break_points: bps, degenerate: false }
}

/// Length-graded class tables plus the per-break-count direct sums used by
/// the renewal identity.
#[derive(Debug, Clone, Default)]
pub struct GradedTables {
    pub cutoff: usize,
    /// Irreducible paths of any class.
    pub w: GradedTable,
    pub w_l: GradedTable,
    pub w_0: GradedTable,
    pub w_r: GradedTable,
    /// `direct[k]`: weight of paths with exactly `k + 1` break points.
    pub direct: Vec<GradedTable>,
    pub class_totals: BTreeMap<PathClass, f64>,
    pub total: f64,
    pub n_paths: u64,
    /// Paths whose pieces failed to reconstruct the path or to land in the
    /// expected classes (only counted when checking is on).
    pub reconstruction_failures: u64,
    pub class_failures: u64,
    pub first_failure: Option<Path>,
}

impl GradedTables {
    fn new(cutoff: usize) -> Self {
        GradedTables { cutoff, ..Default::default() }
    }

    /// Records a path of weight `w` given its site coordinates.
    fn record(&mut self, pts: &[Vec<f64>], end: Point, len: usize, w: f64, spec: &BreakSpec, check: Option<&Path>) {
        let bps = break_points_coords(pts, spec);
        let class = classify_coords(pts, spec, !bps.is_empty());
        self.n_paths += 1;
        self.total += w;
        *self.class_totals.entry(class).or_insert(0.0) += w;
        if class.is_irreducible() {
            self.w.add(end.clone(), len, w);
        }
        if class.in_left() {
            self.w_l.add(end.clone(), len, w);
        }
        if class.in_right() {
            self.w_r.add(end.clone(), len, w);
        }
        if class == PathClass::Zero {
            self.w_0.add(end.clone(), len, w);
        }
        if !bps.is_empty() {
            let k = bps.len() - 1;
            if self.direct.len() <= k {
                self.direct.resize(k + 1, GradedTable::new());
            }
            self.direct[k].add(end, len, w);
        }
        if let (Some(path), false) = (check, bps.is_empty()) {
            let pieces = split_at(path, &bps);
            let rebuilt = pieces[1..].iter().fold(pieces[0].clone(), |acc, p| {
                let mut s = acc.sites().to_vec();
                s.extend_from_slice(&p.sites()[1..]);
                Path::new(s).expect("pieces join")
            });
            let n = pieces.len();
            let classes_ok = pieces.iter().enumerate().all(|(i, p)| {
                let c = classify(p, spec);
                match i {
                    0 => c.in_left(),
                    i if i == n - 1 => c.in_right(),
                    _ => c == PathClass::Zero,
                }
            });
            if &rebuilt != path {
                self.reconstruction_failures += 1;
            }
            if !classes_ok {
                self.class_failures += 1;
            }
            if (&rebuilt != path || !classes_ok) && self.first_failure.is_none() {
                self.first_failure = Some(path.clone());
            }
        }
    }

    fn merge_from(&mut self, o: GradedTables) {
        self.w.merge(&o.w);
        self.w_l.merge(&o.w_l);
        self.w_0.merge(&o.w_0);
        self.w_r.merge(&o.w_r);
        if self.direct.len() < o.direct.len() {
            self.direct.resize(o.direct.len(), GradedTable::new());
        }
        for (k, t) in o.direct.iter().enumerate() {
            self.direct[k].merge(t);
        }
        for (c, v) in o.class_totals {
            *self.class_totals.entry(c).or_insert(0.0) += v;
        }
        self.total += o.total;
        self.n_paths += o.n_paths;
        self.reconstruction_failures += o.reconstruction_failures;
        self.class_failures += o.class_failures;
        if self.first_failure.is_none() {
            self.first_failure = o.first_failure;
        }
    }

    /// Direct weight of all paths with at least two break points.
    pub fn direct_decomposable(&self) -> GradedTable {
        let mut out = GradedTable::new();
        for t in self.direct.iter().skip(1) {
            out.merge(t);
        }
        out
    }

    /// `{W, W_L, W_0, W_R}` summed over lengths.
    pub fn weight_tables(&self) -> WeightTableSet {
        WeightTableSet {
            w: self.w.collapse(TableKind::W, self.cutoff),
            w_l: self.w_l.collapse(TableKind::WL, self.cutoff),
            w_0: self.w_0.collapse(TableKind::W0, self.cutoff),
            w_r: self.w_r.collapse(TableKind::WR, self.cutoff),
        }
    }

    /// Class totals add up to the total path weight.
    pub fn partition_error(&self) -> f64 {
        let s: f64 = self.class_totals.values().sum();
        (s - self.total).abs() / self.total.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightTableSet {
    pub w: WeightTable,
    pub w_l: WeightTable,
    pub w_0: WeightTable,
    pub w_r: WeightTable,
}

impl WeightTableSet {
    pub fn into_vec(self) -> Vec<WeightTable> {
        vec![self.w, self.w_l, self.w_0, self.w_r]
    }

    pub fn from_vec(tables: Vec<WeightTable>) -> Result<Self> {
        let find = |k: TableKind| {
            tables
                .iter()
                .find(|t| t.kind == k)
                .cloned()
                .ok_or_else(|| OzError::Schema { field: "kind".into(), message: format!("missing {k:?} table") })
        };
        Ok(WeightTableSet { w: find(TableKind::W)?, w_l: find(TableKind::WL)?, w_0: find(TableKind::W0)?, w_r: find(TableKind::WR)? })
    }
}

struct SawTableVisitor<'a> {
    spec: &'a BreakSpec,
    beta: f64,
    check: bool,
    acc: GradedTables,
    pts: Vec<Vec<f64>>,
}

impl WalkVisitor for SawTableVisitor<'_> {
    fn visit(&mut self, walk: &Walk<'_>) {
        self.pts.clear();
        self.pts.extend(walk.sites.iter().map(|&s| walk.bx.coords(s).into_iter().map(f64::from).collect()));
        let end = Point(walk.bx.coords(walk.end_index()));
        let n = walk.len();
        let path = if self.check { Some(walk.to_path()) } else { None };
        self.acc.record(&self.pts, end, n, (self.beta * n as f64).exp(), self.spec, path.as_ref());
    }

    fn merge(&mut self, other: Self) {
        self.acc.merge_from(other.acc);
    }
}

/// SAW tables from all walks from the origin of length at most `ens.max_len`.
/// With `check`, every decomposable walk is cut, re-joined and its pieces classified.
pub fn build_saw_tables(ens: &SawEnsemble, spec: &BreakSpec, budget: &Budget, check: bool) -> Result<GradedTables> {
    if spec.dim() != ens.dim {
        return Err(OzError::precondition("break spec and ensemble differ in dimension"));
    }
    let make = || SawTableVisitor { spec, beta: ens.beta, check, acc: GradedTables::new(ens.max_len), pts: Vec::new() };
    let (v, _) = enumerate_saws(&Point::origin(ens.dim), ens, budget, make, true)?;
    Ok(v.acc)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfConsistentReport {
    /// Norm scale `s = (t, x_hat) = xi(x_hat)` at each iteration, starting from the seed.
    pub scales: Vec<f64>,
    pub converged: bool,
    pub cutoff: usize,
    pub k: f64,
    pub delta: f64,
}

/// Finds a scale `s` with `W_0`-tables built from the cone of `t = s x_hat`
/// satisfying `sum_y e^{(t,y)} W_0(y) = 1`, by fixed-point iteration started
/// from the finite-cutoff decay-rate estimate.
pub fn self_consistent_saw(
    ens: &SawEnsemble,
    x_hat: &[f64],
    delta: f64,
    k: f64,
    budget: &Budget,
    max_iter: usize,
) -> Result<(BreakSpec, GradedTables, SelfConsistentReport)> {
    let census = Census::run(ens, budget, true)?;
    let seed = crate::saw::correlation_length_from(&census, x_hat, ens.beta, ens.max_len)?;
    let mut s = seed.sequence.last().map(|x| x.1).unwrap_or(seed.estimate);
    let mut scales = vec![s];
    let mut prev: Option<GradedTable> = None;
    for _ in 0..max_iter {
        let spec = BreakSpec::euclidean(x_hat, s, delta, k)?;
        let tables = build_saw_tables(ens, &spec, budget, false)?;
        let same_tables = prev.as_ref() == Some(&tables.w_0);
        let w0 = tables.w_0.collapse(TableKind::W0, ens.max_len);
        let next = solve_ray(&w0, &spec.x_hat)?;
        scales.push(next);
        if same_tables || (next - s).abs() <= 1e-13 * s.abs().max(1.0) {
            let spec = BreakSpec::euclidean(x_hat, next, delta, k)?;
            let tables = if (next - s).abs() == 0.0 { tables } else { build_saw_tables(ens, &spec, budget, false)? };
            let report = SelfConsistentReport { scales, converged: true, cutoff: ens.max_len, k, delta };
            return Ok((spec, tables, report));
        }
        prev = Some(tables.w_0);
        s = next;
    }
    let spec = BreakSpec::euclidean(x_hat, s, delta, k)?;
    let tables = build_saw_tables(ens, &spec, budget, false)?;
    Ok((spec, tables, SelfConsistentReport { scales, converged: false, cutoff: ens.max_len, k, delta }))
}

#[derive(Debug, Clone, Serialize)]
pub struct MassGapReport {
    pub nu_hat: f64,
    pub argmin: Point,
    pub cutoff: usize,
    pub n_entries: usize,
    pub positive: bool,
    pub t_hat: Vec<f64>,
}

/// `nu = min_y -[log W(y) + (t, y)] / |y|` over the irreducible table.
pub fn mass_gap_measure(w: &WeightTable, t_hat: &[f64]) -> Result<MassGapReport> {
    let mut best: Option<(f64, &Point)> = None;
    for (y, wy) in w.iter() {
        if y.is_origin() {
            continue;
        }
        let v = -(wy.ln() + y.dot(t_hat)) / y.norm2();
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, y));
        }
    }
    let (nu_hat, argmin) = best.ok_or_else(|| OzError::precondition("mass gap needs a nonempty W table"))?;
    Ok(MassGapReport {
        nu_hat,
        argmin: argmin.clone(),
        cutoff: w.cutoff,
        n_entries: w.len(),
        positive: nu_hat > 0.0,
        t_hat: t_hat.to_vec(),
    })
}

/// Ising tables: every admissible line from the origin of length at most
/// `cutoff`, weighted by `q(gamma)` computed in the bounding box of the line
/// enlarged by `margin` sites on each side.
#[derive(Debug, Clone, Serialize)]
pub struct IsingTables {
    pub beta: f64,
    pub cutoff: usize,
    pub margin: usize,
    pub tables: WeightTableSet,
    /// Largest relative change of any path weight between margins `margin - 1` and `margin`.
    pub margin_change: f64,
    pub n_paths: usize,
}

/// Edge-self-avoiding paths (trails) from the origin, lengths `1..=max_len`.
pub fn trails_from_origin(dim: usize, max_len: usize) -> Vec<Path> {
    fn go(cur: &mut Vec<Point>, used: &mut Vec<(Point, Point)>, max_len: usize, out: &mut Vec<Path>) {
        if cur.len() > 1 {
            out.push(Path::new(cur.clone()).expect("unit steps"));
        }
        if cur.len() > max_len {
            return;
        }
        let last = cur.last().unwrap().clone();
        for axis in 0..last.dim() {
            for sign in [-1, 1] {
                let next = last.add(&Point::unit(last.dim(), axis, sign));
                let key = if last < next { (last.clone(), next.clone()) } else { (next.clone(), last.clone()) };
                if used.contains(&key) {
                    continue;
                }
                used.push(key);
                cur.push(next);
                go(cur, used, max_len, out);
                cur.pop();
                used.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut vec![Point::origin(dim)], &mut Vec::new(), max_len, &mut out);
    out
}

fn box_around(path: &Path, margin: usize) -> Result<EdgeSet> {
    let m = margin as i32;
    let xs = path.sites().iter().map(|p| p.0[0]);
    let ys = path.sites().iter().map(|p| p.0[1]);
    let (x0, x1) = (xs.clone().min().unwrap() - m, xs.max().unwrap() + m);
    let (y0, y1) = (ys.clone().min().unwrap() - m, ys.max().unwrap() + m);
    EdgeSet::rect_at(&[x0, y0], (x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize)
}

fn ising_path_weight(path: &Path, beta: f64, margin: usize, budget: &Budget) -> Result<Option<f64>> {
    let set = box_around(path, margin)?;
    if !is_admissible_path(&set, path) {
        return Ok(None);
    }
    let mut zc = ZCalc::new(&set, beta, *budget);
    Ok(Some(q_weight(&PathFamily { paths: vec![path.clone()] }, &mut zc)?))
}

/// Admissible trails of length at most `cutoff` with their `q` weights and
/// the largest relative change of a weight from margin `margin - 1`.
fn ising_weighted_trails(beta: f64, cutoff: usize, margin: usize, budget: &Budget) -> Result<(Vec<(Path, f64)>, f64)> {
    if !(beta > 0.0) {
        return Err(OzError::precondition("Ising tables need beta > 0"));
    }
    if margin == 0 {
        return Err(OzError::precondition("margin must be at least 1"));
    }
    let mut out = Vec::new();
    let mut margin_change: f64 = 0.0;
    for path in trails_from_origin(2, cutoff) {
        let Some(w) = ising_path_weight(&path, beta, margin, budget)? else { continue };
        if margin > 1 {
            if let Some(w_prev) = ising_path_weight(&path, beta, margin - 1, budget)? {
                margin_change = margin_change.max((w - w_prev).abs() / w);
            }
        }
        out.push((path, w));
    }
    Ok((out, margin_change))
}

fn ising_tables_from(trails: &[(Path, f64)], beta: f64, spec: &BreakSpec, cutoff: usize, margin: usize, margin_change: f64) -> IsingTables {
    let mut acc = GradedTables::new(cutoff);
    for (path, w) in trails {
        acc.record(&coords_of(path), path.end().clone(), path.len(), *w, spec, None);
    }
    IsingTables { beta, cutoff, margin, tables: acc.weight_tables(), margin_change, n_paths: trails.len() }
}

pub fn build_ising_tables(beta: f64, spec: &BreakSpec, cutoff: usize, margin: usize, budget: &Budget) -> Result<IsingTables> {
    if spec.dim() != 2 {
        return Err(OzError::Unsupported("Ising tables are built in two dimensions".into()));
    }
    let (trails, change) = ising_weighted_trails(beta, cutoff, margin, budget)?;
    Ok(ising_tables_from(&trails, beta, spec, cutoff, margin, change))
}

/// Ising counterpart of [`self_consistent_saw`], seeded with the
/// one-dimensional decay rate `-log tanh beta`.
pub fn self_consistent_ising(
    beta: f64,
    x_hat: &[f64],
    delta: f64,
    k: f64,
    cutoff: usize,
    margin: usize,
    budget: &Budget,
    max_iter: usize,
) -> Result<(BreakSpec, IsingTables, SelfConsistentReport)> {
    if x_hat.len() != 2 {
        return Err(OzError::Unsupported("Ising tables are built in two dimensions".into()));
    }
    let (trails, change) = ising_weighted_trails(beta, cutoff, margin, budget)?;
    let mut s = -beta.tanh().ln();
    let mut scales = vec![s];
    let mut prev: Option<WeightTable> = None;
    for _ in 0..max_iter {
        let spec = BreakSpec::euclidean(x_hat, s, delta, k)?;
        let tables = ising_tables_from(&trails, beta, &spec, cutoff, margin, change);
        let next = solve_ray(&tables.tables.w_0, &spec.x_hat)?;
        scales.push(next);
        let same_tables = prev.as_ref() == Some(&tables.tables.w_0);
        if same_tables || (next - s).abs() <= 1e-13 * s.abs().max(1.0) {
            let spec = BreakSpec::euclidean(x_hat, next, delta, k)?;
            let tables = ising_tables_from(&trails, beta, &spec, cutoff, margin, change);
            return Ok((spec, tables, SelfConsistentReport { scales, converged: true, cutoff, k, delta }));
        }
        prev = Some(tables.tables.w_0);
        s = next;
    }
    let spec = BreakSpec::euclidean(x_hat, s, delta, k)?;
    let tables = ising_tables_from(&trails, beta, &spec, cutoff, margin, change);
    Ok((spec, tables, SelfConsistentReport { scales, converged: false, cutoff, k, delta }))
}

/// `S_0` pieces among the admissible lines of length at most `cutoff`, with
/// their `q` weights (box margin as in [`build_ising_tables`]).
pub fn ising_s0_pieces(beta: f64, spec: &BreakSpec, cutoff: usize, margin: usize, budget: &Budget) -> Result<Vec<(Path, f64)>> {
    if spec.dim() != 2 || !(beta > 0.0) || margin == 0 {
        return Err(OzError::precondition("Ising pieces need d = 2, beta > 0 and margin >= 1"));
    }
    let mut out = Vec::new();
    for path in trails_from_origin(2, cutoff) {
        if classify(&path, spec) != PathClass::Zero {
            continue;
        }
        if let Some(w) = ising_path_weight(&path, beta, margin, budget)? {
            out.push((path, w));
        }
    }
    Ok(out)
}

/// `log q(eta ⨿ lambda) - log q(eta)`, both in the box around the
/// concatenation; `None` when either line is not admissible there.
pub fn ising_conditional_log_weight(eta: &Path, lambda: &Path, beta: f64, margin: usize, budget: &Budget) -> Result<Option<f64>> {
    let joined = eta.concat(lambda);
    let set = box_around(&joined, margin)?;
    if !is_admissible_path(&set, &joined) || !is_admissible_path(&set, eta) {
        return Ok(None);
    }
    let mut zc = ZCalc::new(&set, beta, *budget);
    let num = q_weight(&PathFamily { paths: vec![joined] }, &mut zc)?;
    let den = q_weight(&PathFamily { paths: vec![eta.clone()] }, &mut zc)?;
    if !(num > 0.0 && den > 0.0) {
        return Ok(None);
    }
    Ok(Some(num.ln() - den.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    fn path(c: &[[i32; 2]]) -> Path {
        Path::new(c.iter().map(|x| p(x)).collect()).unwrap()
    }

    fn spec_e1(k: f64) -> BreakSpec {
        BreakSpec::euclidean(&[1.0, 0.0], 1.0, 0.25, k).unwrap()
    }

    #[test]
    fn straight_segment_breaks_everywhere() {
        let g = Path::straight(Point::origin(2), 0, 5);
        assert_eq!(find_break_points(&g, &spec_e1(1.0), None), vec![1, 2, 3, 4]);
    }

    #[test]
    fn backtrack_has_no_break_points_inside() {
        let g = path(&[[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [1, 2], [2, 2], [3, 2]]);
        let bps = find_break_points(&g, &spec_e1(2.0), None);
        assert!(bps.iter().all(|&l| !(2..=6).contains(&l)), "{bps:?}");
    }

    #[test]
    fn straight_three_steps_decomposes_into_unit_edges() {
        let g = Path::straight(Point::origin(2), 0, 3);
        let d = decompose(&g, &spec_e1(1.0));
        assert!(!d.degenerate);
        assert_eq!(d.m(), 1);
        for piece in d.pieces() {
            assert_eq!(piece.len(), 1);
        }
        assert_eq!(d.reconstruct(), g);
    }

    #[test]
    fn degenerate_without_break_points() {
        let g = path(&[[0, 0], [0, 1], [-1, 1]]);
        let d = decompose(&g, &spec_e1(2.0));
        assert!(d.degenerate && d.break_points.is_empty());
        assert_eq!(d.reconstruct(), g);
    }

    #[test]
    fn single_edges_classify() {
        let s = spec_e1(2.0);
        assert_eq!(classify(&path(&[[0, 0], [1, 0]]), &s), PathClass::Zero);
        assert_eq!(classify(&path(&[[0, 0], [-1, 0]]), &s), PathClass::Unclassified);
        assert_eq!(classify(&path(&[[0, 0], [0, 1]]), &s), PathClass::Unclassified);
    }

    #[test]
    fn attachments_restrict_break_points() {
        let g = Path::straight(Point::origin(2), 0, 4);
        let s = spec_e1(1.0);
        let behind = [p(&[1, 1])];
        let att = Attachments { gamma_a: &behind, gamma_b: &[] };
        assert_eq!(find_break_points(&g, &s, Some(&att)), vec![2, 3]);
        let far = [p(&[4, 9])];
        let att = Attachments { gamma_a: &[], gamma_b: &far };
        assert!(find_break_points(&g, &s, Some(&att)).is_empty());
    }

    #[test]
    fn one_dimensional_tables() {
        let ens = SawEnsemble::new(1, -0.7, 6).unwrap();
        let spec = BreakSpec::euclidean(&[1.0], 0.7, 0.25, 2.0).unwrap();
        let t = build_saw_tables(&ens, &spec, &Budget::default(), true).unwrap();
        let set = t.weight_tables();
        assert_eq!(set.w_0.len(), 1);
        assert!((set.w_0.get(&p(&[1])) - (-0.7f64).exp()).abs() < 1e-15);
        // walks towards -x never break: W holds (+1) and every (-n)
        assert_eq!(set.w.len(), 7);
        assert_eq!(t.reconstruction_failures + t.class_failures, 0);
    }

    #[test]
    fn mass_gap_of_synthetic_table() {
        let m = 0.8;
        let mut w = WeightTable::new(TableKind::W, 5);
        for y in [[1, 0], [2, 1], [3, -2], [0, 1]] {
            let pt = p(&y);
            let n = pt.norm2();
            w.add(pt, (-m * n - 0.1 * n).exp());
        }
        // (t, y) <= m |y| with equality on the axis, so the minimum sits at (1, 0)
        let r = mass_gap_measure(&w, &[m, 0.0]).unwrap();
        assert!((r.nu_hat - 0.1).abs() < 1e-12);
        assert_eq!(r.argmin, p(&[1, 0]));
        assert!(mass_gap_measure(&WeightTable::new(TableKind::W, 1), &[m, 0.0]).is_err());
    }

    #[test]
    fn trails_count() {
        // 100 self-avoiding walks of length 4 plus the 8 closed squares
        let t = trails_from_origin(2, 4);
        let mut by_len = [0usize; 5];
        for p in &t {
            by_len[p.len()] += 1;
        }
        assert_eq!(&by_len[1..], &[4, 12, 36, 108]);
    }
}
