//! Renewal sums, generating functions of step tables, the boundary solve for
//! the dual point, curvature, polar shapes and the prefactor fit.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{GradedTables, WeightTableSet};
use crate::error::{OzError, Result};
use crate::lattice::Point;
use crate::norm::convex_hull;
use crate::tables::{GradedTable, TableKind, WeightTable};

pub const NEWTON_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-3;

/// `sum_y w(y) e^{(t, y)}` and its derivatives for a finite table.
#[derive(Debug, Clone)]
pub struct GeneratingFunction {
    dim: usize,
    ys: Vec<Vec<f64>>,
    ws: Vec<f64>,
}

impl GeneratingFunction {
    pub fn new(table: &WeightTable) -> Result<Self> {
        let dim = table.dim().ok_or_else(|| OzError::precondition("generating function of an empty table"))?;
        let (ys, ws) = table.iter().map(|(y, w)| (y.to_f64(), w)).unzip();
        Ok(GeneratingFunction { dim, ys, ws })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn terms<'a>(&'a self, t: &'a [f64]) -> impl Iterator<Item = (&'a [f64], f64)> + 'a {
        self.ys.iter().zip(&self.ws).map(move |(y, &w)| (y.as_slice(), w * dot(y, t).exp()))
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        self.terms(t).map(|(_, v)| v).sum()
    }

    pub fn gradient(&self, t: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for (y, v) in self.terms(t) {
            for a in 0..self.dim {
                g[a] += y[a] * v;
            }
        }
        g
    }

    pub fn hessian(&self, t: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (y, v) in self.terms(t) {
            for a in 0..self.dim {
                for b in 0..self.dim {
                    h[(a, b)] += y[a] * y[b] * v;
                }
            }
        }
        h
    }

    pub fn eval_complex(&self, z: &[Complex64]) -> Complex64 {
        self.ys
            .iter()
            .zip(&self.ws)
            .map(|(y, &w)| {
                let e: Complex64 = y.iter().zip(z).map(|(a, b)| b * a).sum();
                w * e.exp()
            })
            .sum()
    }

    /// Partial derivative along coordinate `a` at complex `z`.
    pub fn partial_complex(&self, z: &[Complex64], a: usize) -> Complex64 {
        self.ys
            .iter()
            .zip(&self.ws)
            .map(|(y, &w)| {
                let e: Complex64 = y.iter().zip(z).map(|(c, b)| b * c).sum();
                w * y[a] * e.exp()
            })
            .sum()
    }

    /// Largest and smallest projection of the support on `x`.
    fn projection_range(&self, x: &[f64]) -> (f64, f64) {
        self.ys.iter().map(|y| dot(y, x)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(OzError::precondition("direction must be nonzero"));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Root `s` of `F(s) = gf(base + s x) = 1`, for `F` increasing.
fn ray_root_from(gf: &GeneratingFunction, base: &[f64], x: &[f64], s0: f64) -> Result<f64> {
    let at = |s: f64| -> Vec<f64> { base.iter().zip(x).map(|(b, v)| b + s * v).collect() };
    let f = |s: f64| gf.eval(&at(s)) - 1.0;
    let df = |s: f64| gf.gradient(&at(s)).iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
    let (mut lo, mut hi) = (s0, s0);
    let mut step = 1.0;
    while f(lo) > 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e6 {
            return Err(OzError::NoConvergence("generating function stays above 1 along the ray".into()));
        }
    }
    step = 1.0;
    while f(hi) < 0.0 {
        hi += step;
        step *= 2.0;
        if step > 1e6 {
            return Err(OzError::NoConvergence("generating function cannot reach 1 along the ray".into()));
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(s);
        if v.abs() <= NEWTON_TOL * 1e-2 {
            return Ok(s);
        }
        if v > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = df(s);
        let newton = s - v / d;
        s = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * s.abs().max(1.0) {
            return Ok(s);
        }
    }
    Ok(s)
}

/// `s > 0` with `sum_y W_0(y) e^{s (x, y)} = 1`; needs `W_0` supported on `(x, y) > 0`
/// and total mass below 1.
pub fn solve_ray(w0: &WeightTable, x_hat: &[f64]) -> Result<f64> {
    let gf = GeneratingFunction::new(w0)?;
    let x = unit(x_hat)?;
    let (lo, _) = gf.projection_range(&x);
    if !(lo > 0.0) {
        return Err(OzError::precondition("W_0 has entries without positive projection on x"));
    }
    let base = vec![0.0; gf.dim()];
    if gf.eval(&base) >= 1.0 {
        return Err(OzError::precondition(format!("untilted mass {} is not below 1; no root on the ray", gf.eval(&base))));
    }
    ray_root_from(&gf, &base, &x, 0.0)
}

/// Real `s` with `gf(s x) = 1`, of either sign; needs positive projections on `x`.
pub fn solve_ray_gf(gf: &GeneratingFunction, x_hat: &[f64]) -> Result<f64> {
    let x = unit(x_hat)?;
    let (lo, _) = gf.projection_range(&x);
    if !(lo > 0.0) {
        return Err(OzError::precondition("entries without positive projection on x"));
    }
    ray_root_from(gf, &vec![0.0; gf.dim()], &x, 0.0)
}

/// Orthonormal basis of the complement of the unit vector `x`.
pub fn transverse_frame(x: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut e_order: Vec<usize> = (0..d).collect();
    e_order.sort_by(|&a, &b| x[a].abs().partial_cmp(&x[b].abs()).unwrap());
    for a in e_order {
        if basis.len() == d - 1 {
            break;
        }
        let mut v = vec![0.0; d];
        v[a] = 1.0;
        for b in std::iter::once(x).chain(basis.iter().map(|b| b.as_slice())) {
            let c = dot(&v, b);
            for i in 0..d {
                v[i] -= c * b[i];
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|c| c / n).collect());
        }
    }
    if d == 2 {
        // fixed orientation: rotate x by +90 degrees
        basis = vec![vec![-x[1], x[0]]];
    }
    basis
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChartTolerances {
    pub newton: f64,
    pub fd_step: f64,
}

/// Local graph of `{gf = 1}` near the point with outward normal `x_hat`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShapeChart {
    pub x_hat: Vec<f64>,
    pub t_hat: Vec<f64>,
    /// `(grad gf(t), x_hat)`.
    pub alpha: f64,
    /// Transverse frame `v_1, ..., v_{d-1}` used for the graph coordinates.
    pub frame: Vec<Vec<f64>>,
    /// `kappa_l`, ascending.
    pub kappas: Vec<f64>,
    /// Principal directions, in ambient coordinates.
    pub directions: Vec<Vec<f64>>,
    /// Curvatures from second differences of the graph.
    pub kappas_fd: Vec<f64>,
    /// Norm of the transverse gradient at `t_hat`.
    pub transverse_gradient: f64,
    /// `gf(t_hat) - 1`.
    pub residual: f64,
    /// Samples `(p, h(p))` along each frame axis.
    pub graph: Vec<(Vec<f64>, f64)>,
    pub tolerances: ChartTolerances,
}

impl ShapeChart {
    /// `h(p)`: height along `x_hat` of the level set over the transverse offset `p`.
    pub fn height(&self, gf: &GeneratingFunction, p: &[f64]) -> Result<f64> {
        let h0 = dot(&self.t_hat, &self.x_hat);
        let mut base: Vec<f64> = self.t_hat.iter().zip(&self.x_hat).map(|(t, x)| t - h0 * x).collect();
        for (c, v) in p.iter().zip(&self.frame) {
            for i in 0..base.len() {
                base[i] += c * v[i];
            }
        }
        ray_root_from(gf, &base, &self.x_hat, h0)
    }
}

/// Point of `{gf = 1}` whose normal is `x_hat`, with its local chart.
pub fn solve_boundary(gf: &GeneratingFunction, x_hat: &[f64]) -> Result<ShapeChart> {
    let x = unit(x_hat)?;
    let d = gf.dim();
    if x.len() != d {
        return Err(OzError::precondition("direction and table differ in dimension"));
    }
    let origin = vec![0.0; d];
    if gf.eval(&origin) >= 1.0 {
        return Err(OzError::precondition(format!(
            "untilted mass {} is not below 1, so the origin is outside the level set",
            gf.eval(&origin)
        )));
    }
    let (_, hi) = gf.projection_range(&x);
    if !(hi > 0.0) {
        return Err(OzError::precondition("no table entry has positive projection on x; the mass cannot reach 1"));
    }
    // The dual point maximises the concave height h(p) = (t(p), x) of the
    // level set over the transverse plane; damped Newton from the ray root.
    let frame = transverse_frame(&x);
    let k = d - 1;
    let lift = |p: &[f64], s0: f64| -> Result<Vec<f64>> {
        let mut base = vec![0.0; d];
        for (c, v) in p.iter().zip(&frame) {
            for i in 0..d {
                base[i] += c * v[i];
            }
        }
        let s = ray_root_from(gf, &base, &x, s0)?;
        Ok(base.iter().zip(&x).map(|(b, v)| b + s * v).collect())
    };
    let mut p = vec![0.0; k];
    let mut t = lift(&p, 0.0)?;
    let mut converged = k == 0;
    for _ in 0..200 {
        if converged {
            break;
        }
        let g = gf.gradient(&t);
        let alpha = dot(g.as_slice(), &x);
        let grad_h = DVector::from_fn(k, |j, _| -dot(g.as_slice(), &frame[j]) / alpha);
        if grad_h.amax() < NEWTON_TOL * 1e-2 {
            converged = true;
            break;
        }
        let hess = gf.hessian(&t);
        let e = DMatrix::from_fn(d, k, |i, j| frame[j][i]);
        let m = e.transpose() * &hess * &e / alpha;
        let step = m.clone().cholesky().map(|c| c.solve(&grad_h)).unwrap_or_else(|| grad_h.clone());
        let h_now = dot(&t, &x);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = p.iter().enumerate().map(|(j, v)| v + lambda * step[j]).collect();
            let t_trial = lift(&trial, h_now)?;
            if dot(&t_trial, &x) >= h_now - 1e-15 * h_now.abs().max(1.0) || lambda < 1e-12 {
                p = trial;
                t = t_trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    if !converged {
        return Err(OzError::NoConvergence("boundary solve: transverse gradient did not vanish".into()));
    }
    let g = gf.gradient(&t);
    let alpha = dot(g.as_slice(), &x);
    let residual = gf.eval(&t) - 1.0;
    if residual.abs() > NEWTON_TOL || !(alpha > 0.0) {
        return Err(OzError::NoConvergence(format!("boundary solve ended with residual {residual:e}, alpha {alpha}")));
    }
    let transverse_gradient = frame.iter().map(|v| dot(g.as_slice(), v).powi(2)).sum::<f64>().sqrt();
    let h = gf.hessian(&t);
    let e = DMatrix::from_fn(d, d - 1, |i, j| frame[j][i]);
    let m = e.transpose() * &h * &e / alpha;
    let (kappas, vecs) = sorted_eigen(&m);
    let directions = vecs.iter().map(|v| (0..d).map(|i| (0..d - 1).map(|j| e[(i, j)] * v[j]).sum()).collect()).collect();
    let mut chart = ShapeChart {
        x_hat: x,
        t_hat: t,
        alpha,
        frame,
        kappas,
        directions,
        kappas_fd: Vec::new(),
        transverse_gradient,
        residual,
        graph: Vec::new(),
        tolerances: ChartTolerances { newton: NEWTON_TOL, fd_step: FD_STEP },
    };
    chart.kappas_fd = fd_kappas(gf, &chart)?;
    for axis in 0..d - 1 {
        for k in -4i32..=4 {
            let mut p = vec![0.0; d - 1];
            p[axis] = 0.05 * k as f64;
            let hp = chart.height(gf, &p)?;
            chart.graph.push((p, hp));
        }
    }
    Ok(chart)
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    if m.nrows() == 0 {
        return (Vec::new(), Vec::new());
    }
    let se = SymmetricEigen::new(m.clone());
    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..m.nrows()).map(|i| (se.eigenvalues[i], se.eigenvectors.column(i).iter().copied().collect())).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

fn fd_kappas(gf: &GeneratingFunction, chart: &ShapeChart) -> Result<Vec<f64>> {
    let k = chart.frame.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let h = FD_STEP;
    let h0 = dot(&chart.t_hat, &chart.x_hat);
    let at = |p: Vec<f64>| chart.height(gf, &p);
    let mut hess = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut pp = vec![0.0; k];
        pp[i] = h;
        let mut pm = vec![0.0; k];
        pm[i] = -h;
        hess[(i, i)] = (at(pp)? - 2.0 * h0 + at(pm)?) / (h * h);
        for j in 0..i {
            let mut v = [0.0; 4];
            for (n, (si, sj)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().enumerate() {
                let mut p = vec![0.0; k];
                p[i] = si * h;
                p[j] = sj * h;
                v[n] = at(p)?;
            }
            let c = (v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h);
            hess[(i, j)] = c;
            hess[(j, i)] = c;
        }
    }
    Ok(sorted_eigen(&(-hess)).0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub kappas: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub kappas_fd: Vec<f64>,
    pub max_fd_difference: f64,
    pub all_positive: bool,
}

/// Principal curvatures of the chart; refuses charts with a non-positive curvature.
pub fn curvature_report(chart: &ShapeChart) -> Result<CurvatureReport> {
    let max_fd_difference = chart.kappas.iter().zip(&chart.kappas_fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let all_positive = chart.kappas.iter().all(|&k| k > 0.0);
    if !all_positive {
        return Err(OzError::violation(format!("non-positive principal curvature {:?}", chart.kappas)));
    }
    Ok(CurvatureReport {
        kappas: chart.kappas.clone(),
        directions: chart.directions.clone(),
        kappas_fd: chart.kappas_fd.clone(),
        max_fd_difference,
        all_positive,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RenewalReport {
    pub target: Point,
    pub value: f64,
    pub log_value: f64,
    /// Contribution of `W`.
    pub irreducible: f64,
    /// Per-`M` terms `W_L * W_0^{*M} * W_R`, `M = 0, 1, ...` (only with an explicit `M_max`).
    pub terms: Vec<f64>,
    /// Every nonzero term is included.
    pub exhausted: bool,
    /// Bound on the omitted terms when truncated, from the tilted masses.
    pub tail_bound: Option<f64>,
}

/// Tables on integer layers along a coordinate axis.
struct Layered {
    axis: usize,
    sign: i32,
}

impl Layered {
    /// An axis along which every entry of `tables` advances by at least one
    /// layer (the zero displacement is allowed).
    fn find(tables: &[&WeightTable], dim: usize) -> Option<Self> {
        for axis in 0..dim {
            for sign in [1, -1] {
                if tables.iter().all(|t| t.iter().all(|(y, _)| y.is_origin() || sign * y.0[axis] >= 1)) {
                    return Some(Layered { axis, sign });
                }
            }
        }
        None
    }
}

/// `G(x) = W(x) + sum_{M >= 0} (W_L * W_0^{*M} * W_R)(x)`.
///
/// Every table is tilted by `tilt` first so that long convolutions stay in
/// range; the result is untilted at the end. With `m_max = None` the series
/// is summed completely through the renewal equation
/// `H = W_L + H * W_0`, which needs an axis along which all `W_0` and `W_R`
/// displacements advance; otherwise it is truncated at `m_max`.
pub fn renewal_sum(tables: &WeightTableSet, target: &Point, m_max: Option<usize>, tilt: Option<&[f64]>) -> Result<RenewalReport> {
    let dim = target.dim();
    let zero = vec![0.0; dim];
    let tau = tilt.unwrap_or(&zero);
    let tilted = |t: &WeightTable| -> BTreeMap<Point, f64> {
        t.iter().map(|(y, w)| (y.clone(), (w.ln() + y.dot(tau)).exp())).collect()
    };
    for t in [&tables.w, &tables.w_l, &tables.w_0, &tables.w_r] {
        if t.dim().is_some_and(|d| d != dim) {
            return Err(OzError::precondition("tables and target differ in dimension"));
        }
    }
    let (wl, w0, wr) = (tilted(&tables.w_l), tilted(&tables.w_0), tilted(&tables.w_r));
    let irreducible_t = tables.w.get(target) * target.dot(tau).exp();
    let scale = -target.dot(tau);
    let finish = |s: f64, terms: Vec<f64>, exhausted: bool, tail: Option<f64>| {
        let log_value = s.ln() + scale;
        RenewalReport {
            target: target.clone(),
            value: log_value.exp(),
            log_value,
            irreducible: tables.w.get(target),
            terms: terms.into_iter().map(|v: f64| (v.ln() + scale).exp()).collect(),
            exhausted,
            tail_bound: tail,
        }
    };
    match m_max {
        None => {
            let layered = Layered::find(&[&tables.w_0, &tables.w_r], dim).ok_or_else(|| {
                OzError::Unsupported("full renewal sum needs an axis along which W_0 and W_R advance; pass M_max".into())
            })?;
            let h = renewal_equation(&wl, &w0, &wr, target, &layered);
            let s = irreducible_t + h;
            Ok(finish(s, Vec::new(), true, None))
        }
        Some(m_max) => {
            let x_hat: Vec<f64> = target.to_f64();
            let min_step = w0.keys().map(|y| y.dot(&x_hat)).fold(f64::INFINITY, f64::min);
            let reach = target.dot(&x_hat);
            let mut terms = Vec::new();
            let mut f = wl.clone();
            let mut exhausted = false;
            for m in 0..=m_max {
                let mut term = 0.0;
                for (r, w) in &wr {
                    term += f.get(&target.sub(r)).copied().unwrap_or(0.0) * w;
                }
                terms.push(term);
                if m == m_max {
                    break;
                }
                let mut next = BTreeMap::new();
                for (y, a) in &f {
                    for (z, b) in &w0 {
                        let p = y.add(z);
                        // prune positions that can no longer reach the target
                        if min_step > 0.0 && p.dot(&x_hat) > reach + wr_max_back(&wr, &x_hat) {
                            continue;
                        }
                        *next.entry(p).or_insert(0.0) += a * b;
                    }
                }
                f = next;
                if f.is_empty() {
                    exhausted = true;
                    break;
                }
            }
            let total: f64 = irreducible_t + terms.iter().sum::<f64>();
            let tail = if exhausted {
                None
            } else {
                let q0: f64 = w0.values().sum();
                let ql: f64 = wl.values().sum();
                let qr: f64 = wr.values().sum();
                (q0 < 1.0).then(|| (ql * qr * q0.powi(m_max as i32 + 1) / (1.0 - q0) * scale.exp()).min(f64::MAX))
            };
            Ok(finish(total, terms, exhausted, tail))
        }
    }
}

fn wr_max_back(wr: &BTreeMap<Point, f64>, x: &[f64]) -> f64 {
    -wr.keys().map(|r| r.dot(x)).fold(f64::INFINITY, f64::min)
}

/// `sum_r H(target - r) W_R(r)` with `H = W_L + H * W_0`, layer by layer.
fn renewal_equation(
    wl: &BTreeMap<Point, f64>,
    w0: &BTreeMap<Point, f64>,
    wr: &BTreeMap<Point, f64>,
    target: &Point,
    lay: &Layered,
) -> f64 {
    let dim = target.dim();
    let layer_of = |p: &Point| lay.sign * p.0[lay.axis];
    let (Some(l_min), Some(_)) = (wl.keys().map(layer_of).min(), wr.keys().next()) else { return 0.0 };
    let l_end = layer_of(target) - wr.keys().map(layer_of).min().unwrap();
    if l_end < l_min {
        return 0.0;
    }
    // transverse coordinates relative to the target, bounded by backward reach
    let trans: Vec<usize> = (0..dim).filter(|&a| a != lay.axis).collect();
    let mut c = vec![0.0f64; trans.len()];
    for (z, _) in w0.iter().chain(wr.iter()) {
        let adv = layer_of(z).max(1) as f64;
        for (j, &a) in trans.iter().enumerate() {
            c[j] = c[j].max(z.0[a].abs() as f64 / adv);
        }
    }
    let r_extent: Vec<i32> = trans.iter().map(|&a| wr.keys().map(|r| r.0[a].abs()).max().unwrap_or(0)).collect();
    let half = |l: i32| -> Vec<i32> {
        let rem = (layer_of(target) - l).max(0) as f64;
        c.iter().zip(&r_extent).map(|(cj, re)| (cj * rem).ceil() as i32 + re).collect()
    };
    struct Layer {
        half: Vec<i32>,
        vals: Vec<f64>,
    }
    let index = |layer: &Layer, off: &[i32]| -> Option<usize> {
        let mut idx = 0usize;
        for (o, h) in off.iter().zip(&layer.half) {
            if o.abs() > *h {
                return None;
            }
            idx = idx * (2 * *h as usize + 1) + (o + h) as usize;
        }
        Some(idx)
    };
    let max_adv = w0.keys().map(layer_of).max().unwrap_or(1).max(1);
    let final_min = layer_of(target) - wr.keys().map(layer_of).max().unwrap_or(0);
    let mut layers: BTreeMap<i32, Layer> = BTreeMap::new();
    let offsets_of = |layer: &Layer| -> Vec<Vec<i32>> {
        let mut out = vec![Vec::new()];
        for h in &layer.half {
            out = out.into_iter().flat_map(|o| (-h..=*h).map(move |v| [o.clone(), vec![v]].concat())).collect();
        }
        out
    };
    let mut total = 0.0;
    let read = |layers: &BTreeMap<i32, Layer>, p: &Point| -> f64 {
        let Some(layer) = layers.get(&layer_of(p)) else { return 0.0 };
        let off: Vec<i32> = trans.iter().map(|&a| p.0[a] - target.0[a]).collect();
        index(layer, &off).map(|i| layer.vals[i]).unwrap_or(0.0)
    };
    for l in l_min..=l_end {
        let hh = half(l);
        let size: usize = hh.iter().map(|h| 2 * *h as usize + 1).product();
        let mut layer = Layer { half: hh, vals: vec![0.0; size] };
        for (k, off) in offsets_of(&layer).into_iter().enumerate() {
            let mut p = target.clone();
            p.0[lay.axis] = lay.sign * l;
            for (j, &a) in trans.iter().enumerate() {
                p.0[a] = target.0[a] + off[j];
            }
            let mut v = wl.get(&p).copied().unwrap_or(0.0);
            for (z, w) in w0 {
                v += read(&layers, &p.sub(z)) * w;
            }
            layer.vals[k] = v;
        }
        layers.insert(l, layer);
        // keep what W_0 still reaches and what the final W_R step reads
        while layers.keys().next().is_some_and(|&first| first < l - max_adv && first < final_min) {
            layers.pop_first();
        }
    }
    for (r, w) in wr {
        total += read(&layers, &target.sub(r)) * w;
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct RenewalIdentityReport {
    pub cutoff: usize,
    /// Per `M` (starting at 0): `(series, direct)` totals over all endpoints.
    pub by_m: Vec<(f64, f64)>,
    /// Largest log-domain difference over `(y, length)` entries with `M >= 1`.
    pub max_log_error: f64,
    /// Same, including the single-break term `M = 0`.
    pub max_log_error_all: f64,
    pub decomposable_paths_weight: f64,
}

fn log_error(a: &GradedTable, b: &GradedTable) -> f64 {
    let mut worst: f64 = 0.0;
    let mut keys: Vec<(Point, usize)> = a.iter().map(|(y, n, _)| (y.clone(), n)).collect();
    keys.extend(b.iter().map(|(y, n, _)| (y.clone(), n)));
    for (y, n) in keys {
        let (u, v) = (a.get(&y, n), b.get(&y, n));
        worst = worst.max(if u > 0.0 && v > 0.0 { (u.ln() - v.ln()).abs() } else if u == v { 0.0 } else { f64::INFINITY });
    }
    worst
}

/// Compares `W_L * W_0^{*M} * W_R`, truncated at the cutoff length, with the
/// direct weight of the paths having exactly `M + 1` break points.
pub fn renewal_identity(t: &GradedTables) -> RenewalIdentityReport {
    let mut by_m = Vec::new();
    let mut series_all = GradedTable::new();
    let mut direct_all = GradedTable::new();
    let mut series_dec = GradedTable::new();
    let mut f = t.w_l.clone();
    let mut m = 0;
    loop {
        let term = f.convolve(&t.w_r, t.cutoff);
        let direct = t.direct.get(m).cloned().unwrap_or_default();
        if term.is_empty() && direct.is_empty() && m >= t.direct.len() {
            break;
        }
        by_m.push((term.total(), direct.total()));
        series_all.merge(&term);
        direct_all.merge(&direct);
        if m >= 1 {
            series_dec.merge(&term);
        }
        f = f.convolve(&t.w_0, t.cutoff);
        m += 1;
        if f.is_empty() && m >= t.direct.len() {
            break;
        }
    }
    let dec = t.direct_decomposable();
    RenewalIdentityReport {
        cutoff: t.cutoff,
        by_m,
        max_log_error: log_error(&series_dec, &dec),
        max_log_error_all: log_error(&series_all, &direct_all),
        decomposable_paths_weight: dec.total(),
    }
}

/// Finite step law along `x_hat` with a known tilt, standing in for `Q_0`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticStepModel {
    pub steps: Vec<(Point, f64)>,
    pub mass: f64,
    pub x_hat: Vec<f64>,
    /// gcd of transverse step differences in two dimensions; `None` otherwise.
    pub transverse_gcd: Option<i32>,
}

impl SyntheticStepModel {
    pub fn new(steps: Vec<(Point, f64)>, mass: f64, x_hat: &[f64]) -> Result<Self> {
        let x = unit(x_hat)?;
        if steps.is_empty() {
            return Err(OzError::precondition("empty step law"));
        }
        if !(mass > 0.0) {
            return Err(OzError::precondition(format!("mass {mass} must be positive")));
        }
        let d = x.len();
        let total: f64 = steps.iter().map(|s| s.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OzError::precondition(format!("step probabilities sum to {total}, not 1")));
        }
        for (y, p) in &steps {
            if y.dim() != d || !(*p > 0.0) || !(y.dot(&x) > 0.0) {
                return Err(OzError::precondition(format!("step {y} with probability {p} is invalid")));
            }
        }
        let transverse_gcd = (d == 2).then(|| {
            let perp = |y: &Point| -y.0[0] as f64 * x[1] + y.0[1] as f64 * x[0];
            let base = perp(&steps[0].0).round() as i32;
            steps.iter().fold(0, |g, (y, _)| gcd(g, perp(y).round() as i32 - base))
        });
        Ok(SyntheticStepModel { steps, mass, x_hat: x, transverse_gcd })
    }

    /// Steps `(1,0)` with probability 1/2 and `(1, +-1)` with 1/4 each.
    pub fn lazy_walk(mass: f64) -> Result<Self> {
        let p = |a, b| Point(vec![a, b]);
        Self::new(vec![(p(1, 0), 0.5), (p(1, 1), 0.25), (p(1, -1), 0.25)], mass, &[1.0, 0.0])
    }

    /// `W_0(y) = e^{-m (y, x_hat)} prob(y)`.
    pub fn w0(&self) -> WeightTable {
        let mut t = WeightTable::new(TableKind::W0, self.steps.iter().map(|s| s.0.l1() as usize).max().unwrap_or(0));
        for (y, p) in &self.steps {
            t.add(y.clone(), (p.ln() - self.mass * y.dot(&self.x_hat)).exp());
        }
        t
    }

    /// Tables with `W = 0` and point masses at the origin for `W_L`, `W_R`.
    pub fn tables(&self) -> WeightTableSet {
        let d = self.x_hat.len();
        let mut wl = WeightTable::new(TableKind::WL, 0);
        wl.add(Point::origin(d), 1.0);
        let mut wr = WeightTable::new(TableKind::WR, 0);
        wr.add(Point::origin(d), 1.0);
        WeightTableSet { w: WeightTable::new(TableKind::W, 0), w_l: wl, w_0: self.w0(), w_r: wr }
    }

    pub fn t_hat(&self) -> Vec<f64> {
        self.x_hat.iter().map(|v| self.mass * v).collect()
    }

    /// Exact `G(target)` by the renewal equation, tilted by `t_hat`.
    pub fn exact_g(&self, target: &Point) -> Result<RenewalReport> {
        renewal_sum(&self.tables(), target, None, Some(&self.t_hat()))
    }
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolarShapes {
    /// Vertices of the sub-level polygon of `xi`, counter-clockwise.
    pub u_vertices: Vec<[f64; 2]>,
    /// Vertices of `K = ∩ {t : (t, n) <= xi(n)}`, counter-clockwise.
    pub k_vertices: Vec<[f64; 2]>,
    /// `max |h_K(n) - xi(n)|` over the sampled directions.
    pub support_error: f64,
    /// Sample points `n / xi(n)` strictly inside the hull of the others.
    pub nonconvex_samples: Vec<usize>,
}

/// Polygonal `U` and `K` from samples `(n, xi(n))` with unit `n`.
pub fn polar_shapes(samples: &[([f64; 2], f64)]) -> Result<PolarShapes> {
    if samples.len() < 3 {
        return Err(OzError::precondition("need at least three direction samples"));
    }
    let mut pts = Vec::with_capacity(samples.len());
    for (n, xi) in samples {
        let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
        if !(*xi > 0.0) || !(len > 0.0) {
            return Err(OzError::precondition("samples need nonzero directions and positive xi"));
        }
        pts.push([n[0] / xi, n[1] / xi]);
    }
    let hull = convex_hull(pts.clone());
    let on_hull = |p: &[f64; 2]| {
        let k = hull.len();
        (0..k).any(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % k]);
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let scale = ((b[0] - a[0]).hypot(b[1] - a[1])) * (p[0] - a[0]).hypot(p[1] - a[1]);
            cross.abs() <= 1e-9 * scale.max(1e-300)
                && (p[0] - a[0]) * (p[0] - b[0]) + (p[1] - a[1]) * (p[1] - b[1]) <= 1e-12
        })
    };
    let nonconvex_samples = pts.iter().enumerate().filter(|(_, p)| !on_hull(p)).map(|(i, _)| i).collect();
    let big = 1e3 * samples.iter().map(|s| s.1).fold(0.0, f64::max).max(1.0);
    let mut poly = vec![[-big, -big], [big, -big], [big, big], [-big, big]];
    for (n, xi) in samples {
        let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
        let (u, c) = ([n[0] / len, n[1] / len], xi / len);
        poly = clip_halfplane(&poly, u, c);
    }
    let support_error = samples
        .iter()
        .map(|(n, xi)| {
            let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
            let h = poly.iter().map(|v| (v[0] * n[0] + v[1] * n[1]) / len).fold(f64::NEG_INFINITY, f64::max);
            (h - xi / len).abs()
        })
        .fold(0.0, f64::max);
    Ok(PolarShapes { u_vertices: hull, k_vertices: poly, support_error, nonconvex_samples })
}

/// Sutherland-Hodgman step: keep `{t : (t, u) <= c}`.
fn clip_halfplane(poly: &[[f64; 2]], u: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| p[0] * u[0] + p[1] * u[1] - c;
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sa, sb) = (side(&a), side(&b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let r = sa / (sa - sb);
            out.push([a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])]);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleReport {
    pub kappa_bar: f64,
    pub trials: usize,
    pub min_slack: f64,
    /// Slack divided by `|u| + |v|`, minimised.
    pub min_relative_slack: f64,
    pub violations: usize,
    pub worst_pair: Option<([f64; 2], [f64; 2])>,
}

/// `xi(u) + xi(v) - xi(u + v) - kappa_bar (|u| + |v| - |u + v|)` over random
/// pairs in the disk of radius `radius`; values below `-1e-9 (|u| + |v|)` count
/// as violations.
pub fn sharp_triangle_check(
    xi: &dyn Fn(&[f64; 2]) -> f64,
    kappa_bar: f64,
    trials: usize,
    radius: f64,
    seed: u64,
) -> TriangleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| {
        let r = radius * rng.random::<f64>().sqrt();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        [r * a.cos(), r * a.sin()]
    };
    let norm = |v: &[f64; 2]| v[0].hypot(v[1]);
    let mut rep =
        TriangleReport { kappa_bar, trials, min_slack: f64::INFINITY, min_relative_slack: f64::INFINITY, violations: 0, worst_pair: None };
    let check = |u: [f64; 2], v: [f64; 2], rep: &mut TriangleReport| {
        let w = [u[0] + v[0], u[1] + v[1]];
        let slack = xi(&u) + xi(&v) - xi(&w) - kappa_bar * (norm(&u) + norm(&v) - norm(&w));
        let scale = (norm(&u) + norm(&v)).max(1e-300);
        if slack / scale < rep.min_relative_slack {
            rep.min_relative_slack = slack / scale;
            rep.worst_pair = Some((u, v));
        }
        rep.min_slack = rep.min_slack.min(slack);
        if slack < -1e-9 * scale {
            rep.violations += 1;
        }
    };
    for _ in 0..trials {
        let u = sample(&mut rng);
        let v = sample(&mut rng);
        check(u, v, &mut rep);
    }
    rep
}

/// Support function data at angle `theta`: `h`, `h'` and `h''`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportNode {
    pub theta: f64,
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
}

impl SupportNode {
    /// From a two-dimensional chart: `h = (t, x)`, `h' = (t, x')` and
    /// `h'' = 1/kappa - h`, the radius of curvature being `h + h''`.
    pub fn from_chart(chart: &ShapeChart) -> Result<Self> {
        if chart.x_hat.len() != 2 || chart.kappas.len() != 1 {
            return Err(OzError::precondition("support nodes need a two-dimensional chart"));
        }
        let (x, t) = (&chart.x_hat, &chart.t_hat);
        let kappa = chart.kappas[0];
        if !(kappa > 0.0) {
            return Err(OzError::violation(format!("non-positive curvature {kappa}")));
        }
        let h = t[0] * x[0] + t[1] * x[1];
        Ok(SupportNode { theta: x[1].atan2(x[0]), h, dh: -t[0] * x[1] + t[1] * x[0], d2h: 1.0 / kappa - h })
    }
}

/// Square-symmetric support function `h(theta) = sum_k a_k cos(4 k theta)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetricSupportFit {
    pub coeffs: Vec<f64>,
}

impl SymmetricSupportFit {
    /// Least-squares fit of `harmonics + 1` coefficients to the values and
    /// first derivatives at the nodes.
    pub fn fit(nodes: &[SupportNode], harmonics: usize) -> Result<Self> {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for n in nodes {
            rows.push((0..=harmonics).map(|k| (4.0 * k as f64 * n.theta).cos()).collect());
            ys.push(n.h);
            rows.push((0..=harmonics).map(|k| -4.0 * k as f64 * (4.0 * k as f64 * n.theta).sin()).collect());
            ys.push(n.dh);
        }
        let coeffs = crate::stats::least_squares(&rows, &ys)
            .ok_or_else(|| OzError::precondition("too few nodes for the requested harmonics"))?;
        Ok(SymmetricSupportFit { coeffs })
    }

    /// `(h, h'')` at `theta`.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        self.coeffs.iter().enumerate().fold((0.0, 0.0), |(h, h2), (k, a)| {
            let w = 4.0 * k as f64;
            let c = (w * theta).cos();
            (h + a * c, h2 - a * w * w * c)
        })
    }

    /// `|x| h(arg x)`.
    pub fn xi(&self, x: &[f64; 2]) -> f64 {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return 0.0;
        }
        r * self.eval(x[1].atan2(x[0])).0
    }

    /// Smallest `h + h''` over `samples` equally spaced angles of `[0, pi/4]`.
    pub fn min_radius_of_curvature(&self, samples: usize) -> f64 {
        (0..=samples)
            .map(|k| {
                let (h, h2) = self.eval(std::f64::consts::FRAC_PI_4 * k as f64 / samples.max(1) as f64);
                h + h2
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SawShapeEstimate {
    pub beta: f64,
    pub cutoff: usize,
    pub nodes: Vec<SupportNode>,
    pub kappas: Vec<f64>,
    /// Smallest radius of curvature of the fitted boundary.
    pub kappa_bar: f64,
    /// Smallest local radius `1/kappa` among the solved charts.
    pub chart_kappa_bar: f64,
    pub fit: SymmetricSupportFit,
}

/// Samples of the correlation-length norm of the two-dimensional SAW from
/// cutoff tables solved in the `n_dirs` directions `(j + 1/2) pi / (4 n_dirs)`.
///
/// The lattice axes and diagonals are avoided: there whole families of sites
/// tie in projection, and at finite cutoff the irreducible classes (hence the
/// solved boundary point) jump as the direction crosses them.
///
/// `xi` is the square-symmetric fit with `SHAPE_HARMONICS` harmonics through
/// the support values and slopes, and `kappa_bar` is the smallest radius of
/// curvature of its unit ball. The local chart radii are reported alongside;
/// at finite cutoff they exceed the fitted ones.
pub const SHAPE_HARMONICS: usize = 2;

pub fn saw_shape_estimate(ens: &crate::saw::SawEnsemble, n_dirs: usize, delta: f64, k: f64, budget: &crate::budget::Budget) -> Result<SawShapeEstimate> {
    if ens.dim != 2 || n_dirs == 0 {
        return Err(OzError::precondition("shape estimate needs d = 2 and at least one direction"));
    }
    let mut nodes = Vec::new();
    let mut kappas = Vec::new();
    for j in 0..n_dirs {
        let a = std::f64::consts::FRAC_PI_4 * (j as f64 + 0.5) / n_dirs as f64;
        let x = [a.cos(), a.sin()];
        let (_, tables, _) = crate::decomposition::self_consistent_saw(ens, &x, delta, k, budget, 50)?;
        let gf = GeneratingFunction::new(&tables.weight_tables().w_0)?;
        let chart = solve_boundary(&gf, &x)?;
        kappas.push(chart.kappas[0]);
        nodes.push(SupportNode { theta: a, ..SupportNode::from_chart(&chart)? });
    }
    let fit = SymmetricSupportFit::fit(&nodes, SHAPE_HARMONICS.min(n_dirs.saturating_sub(1)))?;
    let chart_kappa_bar = kappas.iter().map(|k| 1.0 / k).fold(f64::INFINITY, f64::min);
    let kappa_bar = fit.min_radius_of_curvature(10_000);
    Ok(SawShapeEstimate { beta: ens.beta, cutoff: ens.max_len, nodes, kappas, kappa_bar, chart_kappa_bar, fit })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrefactorFit {
    /// `(n, Psi_n)` with `log Psi_n = log G(n) + xi n + (d-1)/2 log n`.
    pub psi_by_n: Vec<(f64, f64)>,
    pub psi_hat: f64,
    /// `|Psi_n - Psi_hat|` along the sequence.
    pub residuals: Vec<f64>,
    /// Residuals decrease along the sequence.
    pub residuals_decreasing: bool,
}

/// Fits the Ornstein-Zernike prefactor from `(n, log G(n))` along a ray.
pub fn oz_prefactor_fit(log_g: &[(f64, f64)], xi: f64, d: usize) -> Result<PrefactorFit> {
    if log_g.is_empty() {
        return Err(OzError::precondition("no values to fit"));
    }
    if log_g.iter().any(|(n, lg)| !(lg.is_finite()) || !(*n > 0.0)) {
        return Err(OzError::precondition("G values must be positive at positive n"));
    }
    let psi_by_n: Vec<(f64, f64)> =
        log_g.iter().map(|&(n, lg)| (n, (lg + xi * n + 0.5 * (d as f64 - 1.0) * n.ln()).exp())).collect();
    let psi_hat = psi_by_n.last().unwrap().1;
    let residuals: Vec<f64> = psi_by_n.iter().map(|(_, p)| (p - psi_hat).abs()).collect();
    let residuals_decreasing = residuals.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    Ok(PrefactorFit { psi_by_n, psi_hat, residuals, residuals_decreasing })
}

/// Decay-rate samples `(n, xi(n))` for a two-dimensional norm on `count` equally spaced directions.
pub fn sample_directions(xi: &dyn Fn(&[f64; 2]) -> f64, count: usize) -> Vec<([f64; 2], f64)> {
    (0..count)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / count as f64;
            let n = [a.cos(), a.sin()];
            (n, xi(&n))
        })
        .collect()
}
