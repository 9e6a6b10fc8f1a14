//! Mixed Fourier transforms along `e_1`, the mass shell `omega(p)` by direct
//! fits and by the pole equation `W_0(p_1, i p) = 1`, and truncated Ruelle
//! operators on histories of pieces.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::budget::Budget;
use crate::decomposition::{ising_conditional_log_weight, WeightTableSet};
use crate::error::{OzError, Result};
use crate::lattice::{Path, Point};
use crate::renewal::{GeneratingFunction, ShapeChart};
use crate::tables::WeightTable;

/// Cap on `|alphabet|^m` for truncated operators.
pub const MAX_STATES: usize = 1_000_000;

/// Relative size below which slice entries are dropped.
const SLICE_PRUNE: f64 = 1e-22;

/// Two-point function on slices `x_1 = 0..=N`, stored tilted:
/// `G(n, y) = values[n][y] e^{-(tilt, (n, y))}`.
#[derive(Debug, Clone)]
pub struct Slices {
    pub tilt: Vec<f64>,
    pub values: Vec<BTreeMap<Vec<i32>, f64>>,
}

impl Slices {
    pub fn n_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// Untilted values given pointwise; entries outside `0..=n_max` are ignored.
    pub fn from_points<'a>(points: impl IntoIterator<Item = (&'a Point, f64)>, dim: usize, n_max: usize) -> Self {
        let mut values = vec![BTreeMap::new(); n_max + 1];
        for (y, g) in points {
            let n = y.0[0];
            if n >= 0 && (n as usize) <= n_max && g != 0.0 {
                *values[n as usize].entry(y.0[1..].to_vec()).or_insert(0.0) += g;
            }
        }
        Slices { tilt: vec![0.0; dim], values }
    }

    /// `G = W + W_L * sum_M W_0^{*M} * W_R` on slices `0..=n_max`, via
    /// `H = W_L + H * W_0`. Requires every `W_0` entry to advance along
    /// `e_1` and `W_L`, `W_R` entries not to go backwards.
    pub fn from_renewal(tables: &WeightTableSet, n_max: usize, tilt: &[f64]) -> Result<Self> {
        let dim = tilt.len();
        for t in [&tables.w, &tables.w_l, &tables.w_0, &tables.w_r] {
            if t.dim().is_some_and(|d| d != dim) {
                return Err(OzError::precondition("tables and tilt differ in dimension"));
            }
        }
        let tilted = |t: &WeightTable| -> Vec<(usize, Vec<i32>, f64)> {
            t.iter().map(|(y, w)| (y.0[0].max(0) as usize, y.0[1..].to_vec(), (w.ln() + y.dot(tilt)).exp())).collect()
        };
        if tables.w_0.iter().any(|(y, _)| y.0[0] < 1) {
            return Err(OzError::Unsupported("W_0 entries must advance along e_1".into()));
        }
        if tables.w_l.iter().chain(tables.w_r.iter()).any(|(y, _)| y.0[0] < 0) {
            return Err(OzError::Unsupported("W_L and W_R entries must not move backwards along e_1".into()));
        }
        let (wl, w0, wr) = (tilted(&tables.w_l), tilted(&tables.w_0), tilted(&tables.w_r));
        let add = |m: &mut BTreeMap<Vec<i32>, f64>, k: Vec<i32>, v: f64| *m.entry(k).or_insert(0.0) += v;
        let shift = |a: &[i32], b: &[i32]| -> Vec<i32> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let mut h: Vec<BTreeMap<Vec<i32>, f64>> = vec![BTreeMap::new(); n_max + 1];
        for (n, y, w) in &wl {
            if *n <= n_max {
                add(&mut h[*n], y.clone(), *w);
            }
        }
        for n in 0..=n_max {
            let mut layer = std::mem::take(&mut h[n]);
            for (a, z, w) in &w0 {
                if *a > n {
                    continue;
                }
                for (y, v) in &h[n - a] {
                    add(&mut layer, shift(y, z), v * w);
                }
            }
            prune(&mut layer);
            h[n] = layer;
        }
        let mut values: Vec<BTreeMap<Vec<i32>, f64>> = vec![BTreeMap::new(); n_max + 1];
        for (y, w) in tables.w.iter() {
            if y.0[0] >= 0 && (y.0[0] as usize) <= n_max {
                add(&mut values[y.0[0] as usize], y.0[1..].to_vec(), (w.ln() + y.dot(tilt)).exp());
            }
        }
        for n in 0..=n_max {
            for (a, z, w) in &wr {
                if *a > n {
                    continue;
                }
                for (y, v) in &h[n - a] {
                    add(&mut values[n], shift(y, z), v * w);
                }
            }
        }
        Ok(Slices { tilt: tilt.to_vec(), values })
    }

    /// `log |sum_y e^{i (p, y)} G(n, y)|` and the sign of the real part.
    pub fn log_slice_sum(&self, n: usize, p: &[f64]) -> Option<(f64, f64)> {
        let s = self.tilted_slice_sum(n, Complex64::new(0.0, 0.0), p);
        let a = s.norm();
        (a > 0.0).then(|| (a.ln() - self.tilt[0] * n as f64, s.re.signum()))
    }

    /// `e^{p1_shift n} sum_y e^{(i p - t_perp, y)} G~(n, y)`; with
    /// `p1_shift = p_1 - t_1` this is the `n`-th term of the mixed transform.
    fn tilted_slice_sum(&self, n: usize, p1_shift: Complex64, p: &[f64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (y, v) in &self.values[n] {
            let mut e = Complex64::new(0.0, 0.0);
            for (j, &c) in y.iter().enumerate() {
                e += Complex64::new(-self.tilt[j + 1], p[j]) * c as f64;
            }
            s += v * e.exp();
        }
        s * (p1_shift * n as f64).exp()
    }
}

fn prune(m: &mut BTreeMap<Vec<i32>, f64>) {
    let max = m.values().fold(0.0f64, |a, &b| a.max(b.abs()));
    m.retain(|_, v| v.abs() > max * SLICE_PRUNE);
}

#[derive(Debug, Clone, Serialize)]
pub struct FourierReport {
    pub value: Complex64,
    pub n_max: usize,
    /// Fitted exponential decay rate of the `p = 0` slice sums.
    pub decay_rate: f64,
    pub tail_bound: Option<f64>,
    /// `Re p_1` is at or above the decay rate: the series diverges.
    pub divergent: bool,
}

/// `sum_{n <= N} sum_y e^{p_1 n + i (p, y)} G(n, y)` with a tail bound from
/// the decay of the `p = 0` slice sums over the last half of the slices.
pub fn mixed_fourier(g: &Slices, p1: Complex64, p: &[f64]) -> Result<FourierReport> {
    if p.len() + 1 != g.tilt.len() {
        return Err(OzError::precondition("momentum has the wrong dimension"));
    }
    let n_max = g.n_max();
    let mut value = Complex64::new(0.0, 0.0);
    for n in 0..=n_max {
        value += g.tilted_slice_sum(n, p1 - g.tilt[0], p);
    }
    let zero = vec![0.0; p.len()];
    let logs: Vec<(f64, f64)> = (n_max / 2..=n_max)
        .filter_map(|n| g.log_slice_sum(n, &zero).map(|(l, _)| (n as f64, l)))
        .collect();
    let decay_rate = if logs.len() >= 2 { -linear_fit(&logs).0 } else { f64::NAN };
    let divergent = !(p1.re < decay_rate);
    let tail_bound = (!divergent).then(|| {
        let log_c = logs.iter().map(|(n, l)| l + decay_rate * n).fold(f64::NEG_INFINITY, f64::max);
        let r = p1.re - decay_rate;
        (log_c + r * (n_max + 1) as f64).exp() / (1.0 - r.exp())
    });
    Ok(FourierReport { value, n_max, decay_rate, tail_bound, divergent })
}

/// Least-squares `(slope, intercept, rms residual)`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectShell {
    pub omega: f64,
    pub residual_rms: f64,
    /// The real part of a slice sum changes sign inside the window.
    pub oscillating: bool,
}

/// Slope of `-log |sum_y e^{i (p, y)} G(n, y)|` over `n in window`.
pub fn mass_shell_direct(g: &Slices, p: &[f64], window: (usize, usize)) -> Result<DirectShell> {
    let (lo, hi) = window;
    if hi > g.n_max() || hi <= lo {
        return Err(OzError::precondition(format!("window {lo}..={hi} not inside the slices 0..={}", g.n_max())));
    }
    let mut pts = Vec::new();
    let mut signs = Vec::new();
    for n in lo..=hi {
        let (l, s) = g
            .log_slice_sum(n, p)
            .ok_or_else(|| OzError::precondition(format!("slice sum vanishes at n = {n}")))?;
        pts.push((n as f64, -l));
        signs.push(s);
    }
    let (slope, _, rms) = linear_fit(&pts);
    let oscillating = signs.iter().any(|&s| s != signs[0]);
    Ok(DirectShell { omega: slope, residual_rms: rms, oscillating })
}

#[derive(Debug, Clone, Serialize)]
pub struct PoleReport {
    pub p: Vec<f64>,
    pub p1: Complex64,
    pub omega: f64,
    /// `d W_0 / d p_1` at the root.
    pub derivative: Complex64,
    /// `|derivative| >= alpha / 2`, with `alpha = |grad W_0|` at the `p = 0` root.
    pub simple: bool,
    pub alpha: f64,
    pub iterations: usize,
}

const POLE_TOL: f64 = 1e-13;

/// Complex Newton for `W_0(p_1, i p) = 1` in `p_1`, started at the real
/// root for `p = 0`.
pub fn pole_solve(gf: &GeneratingFunction, p: &[f64]) -> Result<PoleReport> {
    let d = gf.dim();
    if p.len() + 1 != d {
        return Err(OzError::precondition("momentum has the wrong dimension"));
    }
    let mut x = vec![0.0; d];
    x[0] = 1.0;
    let t1 = crate::renewal::solve_ray_gf(gf, &x)?;
    let mut t = vec![0.0; d];
    t[0] = t1;
    let alpha = gf.gradient(&t).norm();
    let z = |p1: Complex64| -> Vec<Complex64> {
        std::iter::once(p1).chain(p.iter().map(|&v| Complex64::new(0.0, v))).collect()
    };
    let mut p1 = Complex64::new(t1, 0.0);
    for it in 0..200 {
        let zz = z(p1);
        let f = gf.eval_complex(&zz) - 1.0;
        let df = gf.partial_complex(&zz, 0);
        if df.norm() == 0.0 {
            return Err(OzError::NoConvergence(format!("dW_0/dp_1 vanishes at p = {p:?}")));
        }
        // damped step keeps Newton on the sheet connected to p = 0
        let mut step = f / df;
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        p1 -= step;
        if f.norm() < POLE_TOL && step.norm() < 1e-12 {
            let derivative = gf.partial_complex(&z(p1), 0);
            return Ok(PoleReport {
                p: p.to_vec(),
                p1,
                omega: p1.re,
                derivative,
                simple: derivative.norm() >= alpha / 2.0,
                alpha,
                iterations: it + 1,
            });
        }
    }
    Err(OzError::NoConvergence(format!("pole equation at p = {p:?}")))
}

/// Momenta `k p_max / steps`, `k = -steps..=steps`, in every transverse component.
pub fn momentum_grid(transverse_dim: usize, p_max: f64, steps: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (-(steps as i64)..=steps as i64).map(|k| k as f64 * p_max / steps.max(1) as f64).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..transverse_dim {
        out = out.into_iter().flat_map(|o| axis.iter().map(move |&v| [o.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Default momentum range and resolution.
pub const DEFAULT_P_MAX: f64 = std::f64::consts::FRAC_PI_4;
pub const DEFAULT_P_STEPS: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct ShellPoint {
    pub p: Vec<f64>,
    pub omega_pole: f64,
    pub simple: bool,
    pub omega_direct: Option<f64>,
    pub residual: Option<f64>,
    pub oscillating: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MassShell {
    pub points: Vec<ShellPoint>,
    /// Finite-difference Hessian of `omega_pole` at `p = 0`.
    pub hessian: Vec<Vec<f64>>,
    pub fd_step: f64,
    /// Largest `|omega_pole - omega_direct|` over the grid.
    pub max_route_difference: Option<f64>,
}

pub fn mass_shell(gf: &GeneratingFunction, slices: Option<&Slices>, grid: &[Vec<f64>], window: (usize, usize)) -> Result<MassShell> {
    let points: Vec<Result<ShellPoint>> = grid
        .par_iter()
        .map(|p| {
            let pole = pole_solve(gf, p)?;
            let direct = slices.map(|s| mass_shell_direct(s, p, window)).transpose()?;
            Ok(ShellPoint {
                p: p.clone(),
                omega_pole: pole.omega,
                simple: pole.simple,
                omega_direct: direct.as_ref().map(|d| d.omega),
                residual: direct.as_ref().map(|d| d.residual_rms),
                oscillating: direct.is_some_and(|d| d.oscillating),
            })
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let k = gf.dim() - 1;
    let h = crate::renewal::FD_STEP;
    let om = |p: &[f64]| pole_solve(gf, p).map(|r| r.omega);
    let mut hessian = vec![vec![0.0; k]; k];
    let zero = vec![0.0; k];
    let o0 = om(&zero)?;
    for a in 0..k {
        for b in 0..k {
            let at = |sa: f64, sb: f64| {
                let mut p = zero.clone();
                p[a] += sa * h;
                p[b] += sb * h;
                om(&p)
            };
            hessian[a][b] = if a == b {
                (at(1.0, 0.0)? - 2.0 * o0 + at(-1.0, 0.0)?) / (h * h)
            } else {
                (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * h * h)
            };
        }
    }
    let max_route_difference = points
        .iter()
        .filter_map(|s| s.omega_direct.map(|d| (d - s.omega_pole).abs()))
        .reduce(f64::max);
    Ok(MassShell { points, hessian, fd_step: h, max_route_difference })
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianComparison {
    pub shell: Vec<Vec<f64>>,
    pub chart: Vec<Vec<f64>>,
    pub max_deviation: f64,
}

/// `Hess omega(0)` against `sum_l kappa_l v_l v_l^T` in the coordinates transverse to `e_1`.
pub fn hessian_compare(shell: &MassShell, chart: &ShapeChart) -> Result<HessianComparison> {
    let k = shell.hessian.len();
    let x = &chart.x_hat;
    if x.len() != k + 1 || (x[0] - 1.0).abs() > 1e-12 {
        return Err(OzError::precondition("the chart must be taken in direction e_1"));
    }
    let mut m = vec![vec![0.0; k]; k];
    for (kappa, v) in chart.kappas.iter().zip(&chart.directions) {
        for a in 0..k {
            for b in 0..k {
                m[a][b] += kappa * v[a + 1] * v[b + 1];
            }
        }
    }
    let max_deviation = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| (m[a][b] - shell.hessian[a][b]).abs())
        .fold(0.0, f64::max);
    Ok(HessianComparison { shell: shell.hessian.clone(), chart: m, max_deviation })
}

/// `(L f)(h) = sum_a exp(psi(a | h) + (z, V(a))) f(h a)` on functions of the
/// last `memory` symbols.
#[derive(Debug, Clone)]
pub struct TruncatedRuelleOperator {
    pub displacements: Vec<Point>,
    pub memory: usize,
    /// `log_weights[h * |A| + a]`; `-inf` for forbidden continuations.
    log_weights: Vec<f64>,
    /// Weights do not depend on the history.
    pub product: bool,
}

impl TruncatedRuelleOperator {
    fn states(alphabet: usize, memory: usize) -> Result<usize> {
        let s = (alphabet as u128).checked_pow(memory as u32).unwrap_or(u128::MAX);
        if s > MAX_STATES as u128 {
            return Err(OzError::Budget { what: "Ruelle operator histories".into(), needed: s, cap: MAX_STATES as u128 });
        }
        Ok(s as usize)
    }

    /// Product weights `psi(a | h) = log W_0(a)` over the entries of `w0`.
    pub fn product(w0: &WeightTable, memory: usize) -> Result<Self> {
        if w0.is_empty() {
            return Err(OzError::precondition("empty alphabet"));
        }
        let (displacements, logs): (Vec<Point>, Vec<f64>) = w0.iter().map(|(y, w)| (y.clone(), w.ln())).unzip();
        let states = Self::states(displacements.len(), memory)?;
        let log_weights = (0..states).flat_map(|_| logs.iter().copied()).collect();
        Ok(TruncatedRuelleOperator { displacements, memory, log_weights, product: true })
    }

    /// Weights from `psi(history, a)`, history oldest first.
    pub fn from_conditional(
        displacements: Vec<Point>,
        memory: usize,
        psi: impl Fn(&[usize], usize) -> Result<f64> + Sync,
    ) -> Result<Self> {
        let n = displacements.len();
        if n == 0 {
            return Err(OzError::precondition("empty alphabet"));
        }
        let states = Self::states(n, memory)?;
        let log_weights: Result<Vec<f64>> = (0..states * n)
            .into_par_iter()
            .map(|i| psi(&history_of(i / n, n, memory), i % n))
            .collect();
        Ok(TruncatedRuelleOperator { displacements, memory, log_weights: log_weights?, product: false })
    }

    pub fn alphabet_len(&self) -> usize {
        self.displacements.len()
    }

    pub fn n_states(&self) -> usize {
        self.log_weights.len() / self.displacements.len()
    }

    pub fn log_weight(&self, state: usize, a: usize) -> f64 {
        self.log_weights[state * self.alphabet_len() + a]
    }

    fn next_state(&self, state: usize, a: usize) -> usize {
        if self.memory == 0 {
            0
        } else {
            let n = self.alphabet_len();
            (state % n.pow(self.memory as u32 - 1)) * n + a
        }
    }

    /// Largest `|psi(a | h) - psi(a | h')|` over histories that differ only
    /// in the symbol `depth` steps back (1 = most recent).
    pub fn variation_at_depth(&self, depth: usize) -> Option<f64> {
        if depth == 0 || depth > self.memory {
            return None;
        }
        let n = self.alphabet_len();
        let stride = n.pow(depth as u32 - 1);
        let mut worst: f64 = 0.0;
        for h in 0..self.n_states() {
            let digit = (h / stride) % n;
            for other in 0..n {
                if other <= digit {
                    continue;
                }
                let h2 = h + (other - digit) * stride;
                for a in 0..n {
                    let (x, y) = (self.log_weight(h, a), self.log_weight(h2, a));
                    if x.is_finite() && y.is_finite() {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        Some(worst)
    }
}

fn history_of(mut state: usize, n: usize, memory: usize) -> Vec<usize> {
    let mut h = vec![0; memory];
    for v in h.iter_mut().rev() {
        *v = state % n;
        state /= n;
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct RuelleReport {
    pub eigenvalue: f64,
    /// Collatz-Wielandt bracket `min (Lf)/f <= rho <= max (Lf)/f`.
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_row_sum: f64,
    pub max_row_sum: f64,
    /// `max f / min f` of the eigenvector estimate.
    pub eigvec_spread: f64,
    /// `sum_a exp(psi(a) + (z, V(a)))` for product operators.
    pub scalar_sum: Option<f64>,
}

pub const RUELLE_TOL: f64 = 1e-12;

/// Leading eigenvalue at real `z` by power iteration.
pub fn ruelle_leading_eigenvalue(op: &TruncatedRuelleOperator, z: &[f64], max_iter: usize) -> RuelleReport {
    let n = op.alphabet_len();
    let states = op.n_states();
    let tilt: Vec<f64> = op.displacements.iter().map(|v| v.dot(z)).collect();
    let w = |h: usize, a: usize| (op.log_weight(h, a) + tilt[a]).exp();
    let rows: Vec<f64> = (0..states).into_par_iter().map(|h| (0..n).map(|a| w(h, a)).sum()).collect();
    let min_row_sum = rows.iter().copied().fold(f64::INFINITY, f64::min);
    let max_row_sum = rows.iter().copied().fold(0.0, f64::max);
    let mut f = vec![1.0; states];
    let (mut lower, mut upper) = (min_row_sum, max_row_sum);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let g: Vec<f64> = (0..states)
            .into_par_iter()
            .map(|h| (0..n).map(|a| w(h, a) * f[op.next_state(h, a)]).sum())
            .collect();
        let ratios = f.iter().zip(&g).filter(|(fv, _)| **fv > 0.0).map(|(fv, gv)| gv / fv);
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r), h.max(r)));
        lower = lo;
        upper = hi;
        let norm = g.iter().copied().fold(0.0, f64::max);
        if !(norm > 0.0) {
            break;
        }
        f = g.into_iter().map(|v| v / norm).collect();
        if upper - lower <= RUELLE_TOL * upper {
            converged = true;
            break;
        }
    }
    let fmin = f.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let fmax = f.iter().copied().fold(0.0, f64::max);
    RuelleReport {
        eigenvalue: 0.5 * (lower + upper),
        lower,
        upper,
        iterations,
        converged,
        min_row_sum,
        max_row_sum,
        eigvec_spread: fmax / fmin,
        scalar_sum: op.product.then(|| (0..n).map(|a| w(0, a)).sum()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RuelleRoot {
    /// `p_1` with `rho(p_1 e_1) = 1`.
    pub p1: f64,
    pub iterations: usize,
}

/// Root of `rho(p_1 e_1) = 1` by bisection on `log rho`, increasing in `p_1`
/// when every displacement advances along `e_1`.
pub fn ruelle_root(op: &TruncatedRuelleOperator, max_iter: usize) -> Result<RuelleRoot> {
    if op.displacements.iter().any(|v| v.0[0] < 1) {
        return Err(OzError::precondition("every symbol must advance along e_1"));
    }
    let d = op.displacements[0].dim();
    let rho = |p1: f64| {
        let mut z = vec![0.0; d];
        z[0] = p1;
        let r = ruelle_leading_eigenvalue(op, &z, max_iter);
        if r.converged {
            Ok(r.eigenvalue)
        } else {
            Err(OzError::NoConvergence(format!("power iteration at p_1 = {p1}")))
        }
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut guard = 0;
    while rho(lo)? > 1.0 {
        lo *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(OzError::NoConvergence("no lower bracket for rho = 1".into()));
        }
    }
    while rho(hi)? < 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 120 {
            return Err(OzError::NoConvergence("no upper bracket for rho = 1".into()));
        }
    }
    let mut iterations = 0;
    while hi - lo > 1e-13 * hi.abs().max(1.0) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if rho(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(RuelleRoot { p1: 0.5 * (lo + hi), iterations })
}

/// Ising operator on `pieces` with finite-box conditional weights
/// `q(eta ⨿ lambda) / q(eta)`, `eta` the concatenated history.
pub fn ising_operator(pieces: &[Path], beta: f64, memory: usize, margin: usize, budget: &Budget) -> Result<TruncatedRuelleOperator> {
    let displacements: Vec<Point> = pieces.iter().map(Path::displacement).collect();
    TruncatedRuelleOperator::from_conditional(displacements, memory, |h, a| {
        let eta = h.iter().fold(Path::single(Point::origin(2)), |acc, &s| acc.concat(&pieces[s]));
        Ok(ising_conditional_log_weight(&eta, &pieces[a], beta, margin, budget)?.unwrap_or(f64::NEG_INFINITY))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IsingRuelleComparison {
    pub memory: usize,
    pub ruelle_p1: f64,
    pub pole_p1: f64,
    /// `eps / min V_1`, `eps` the largest log deviation of the conditional
    /// weights from the memoryless ones.
    pub tolerance: f64,
    pub consistent: bool,
    pub min_row_sum: f64,
    pub max_row_sum: f64,
    pub eigenvalue_at_pole: f64,
    pub eigenvalue_within_rows: bool,
    /// `variation(depth 2) / variation(depth 1)` when `memory >= 2`.
    pub theta_hat: Option<f64>,
}

/// Root of `rho = 1` for the memory-`m` Ising operator against `pole_solve`
/// on the memoryless table of the same pieces.
pub fn ising_ruelle_check(pieces: &[(Path, f64)], beta: f64, memory: usize, margin: usize, budget: &Budget) -> Result<IsingRuelleComparison> {
    let paths: Vec<Path> = pieces.iter().map(|p| p.0.clone()).collect();
    let op = ising_operator(&paths, beta, memory, margin, budget)?;
    let mut w0 = WeightTable::new(crate::tables::TableKind::W0, paths.iter().map(Path::len).max().unwrap_or(0));
    for (path, w) in pieces {
        w0.add(path.displacement(), *w);
    }
    let gf = GeneratingFunction::new(&w0)?;
    let d = gf.dim();
    let pole = pole_solve(&gf, &vec![0.0; d - 1])?;
    let root = ruelle_root(&op, 100_000)?;
    let n = op.alphabet_len();
    let mut eps: f64 = 0.0;
    for h in 0..op.n_states() {
        for a in 0..n {
            let x = op.log_weight(h, a);
            if x.is_finite() {
                eps = eps.max((x - pieces[a].1.ln()).abs());
            }
        }
    }
    let min_v1 = op.displacements.iter().map(|v| v.0[0]).min().unwrap_or(1) as f64;
    let tolerance = eps / min_v1 + 1e-9;
    let mut z = vec![0.0; d];
    z[0] = pole.omega;
    let at_pole = ruelle_leading_eigenvalue(&op, &z, 100_000);
    let theta_hat = match (op.variation_at_depth(1), op.variation_at_depth(2)) {
        (Some(v1), Some(v2)) if v1 > 0.0 => Some(v2 / v1),
        _ => None,
    };
    Ok(IsingRuelleComparison {
        memory,
        ruelle_p1: root.p1,
        pole_p1: pole.omega,
        tolerance,
        consistent: (root.p1 - pole.omega).abs() <= tolerance,
        min_row_sum: at_pole.min_row_sum,
        max_row_sum: at_pole.max_row_sum,
        eigenvalue_at_pole: at_pole.eigenvalue,
        eigenvalue_within_rows: at_pole.eigenvalue >= at_pole.min_row_sum * (1.0 - 1e-12)
            && at_pole.eigenvalue <= at_pole.max_row_sum * (1.0 + 1e-12),
        theta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renewal::{solve_boundary, SyntheticStepModel};

    fn lazy_omega(m: f64, p: f64) -> f64 {
        m - ((1.0 + p.cos()) / 2.0).ln()
    }

    #[test]
    fn pole_matches_lazy_closed_form() {
        let model = SyntheticStepModel::lazy_walk(0.4).unwrap();
        let gf = GeneratingFunction::new(&model.w0()).unwrap();
        for k in -16..=16 {
            let p = k as f64 * DEFAULT_P_MAX / 16.0;
            let r = pole_solve(&gf, &[p]).unwrap();
            assert!((r.omega - lazy_omega(0.4, p)).abs() < 1e-12, "{p}");
            assert!(r.simple && r.p1.im.abs() < 1e-12);
        }
    }

    #[test]
    fn direct_fit_matches_pole_on_lazy_walk() {
        let model = SyntheticStepModel::lazy_walk(0.4).unwrap();
        let slices = Slices::from_renewal(&model.tables(), 200, &model.t_hat()).unwrap();
        let gf = GeneratingFunction::new(&model.w0()).unwrap();
        let grid = momentum_grid(1, DEFAULT_P_MAX, DEFAULT_P_STEPS);
        let shell = mass_shell(&gf, Some(&slices), &grid, (100, 200)).unwrap();
        assert!(shell.max_route_difference.unwrap() < 1e-3);
        assert!((shell.hessian[0][0] - 0.5).abs() < 1e-6);
        let chart = solve_boundary(&gf, &[1.0, 0.0]).unwrap();
        assert!(hessian_compare(&shell, &chart).unwrap().max_deviation < 1e-6);
    }

    #[test]
    fn fourier_of_one_dimensional_geometric_series() {
        let beta: f64 = -0.7;
        let pts: Vec<(Point, f64)> = (0..=60).map(|x| (Point(vec![x]), (beta * x as f64).exp())).collect();
        let s = Slices::from_points(pts.iter().map(|(y, g)| (y, *g)), 1, 60);
        let p1 = Complex64::new(0.2, 0.3);
        let r = mixed_fourier(&s, p1, &[]).unwrap();
        let q = (p1 + beta).exp();
        let exact = (1.0 - q.powu(61)) / (1.0 - q);
        assert!((r.value - exact).norm() < 1e-12);
        assert!((r.decay_rate + beta).abs() < 1e-10);
        assert!(mixed_fourier(&s, Complex64::new(0.8, 0.0), &[]).unwrap().divergent);
    }

    #[test]
    fn fourier_conjugate_symmetry() {
        let model = SyntheticStepModel::lazy_walk(0.4).unwrap();
        let s = Slices::from_renewal(&model.tables(), 30, &model.t_hat()).unwrap();
        let a = mixed_fourier(&s, Complex64::new(0.1, 0.0), &[0.3]).unwrap().value;
        let b = mixed_fourier(&s, Complex64::new(0.1, 0.0), &[-0.3]).unwrap().value;
        assert!((a - b.conj()).norm() < 1e-14);
    }

    #[test]
    fn product_operator_is_scalar() {
        let model = SyntheticStepModel::lazy_walk(0.4).unwrap();
        let w0 = model.w0();
        for m in 0..=2 {
            let op = TruncatedRuelleOperator::product(&w0, m).unwrap();
            let r = ruelle_leading_eigenvalue(&op, &[0.1, 0.05], 1000);
            let s = r.scalar_sum.unwrap();
            assert!(r.converged && (r.eigenvalue - s).abs() < 1e-10 * s);
            assert!((r.eigvec_spread - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_operator_bracketed_by_row_sums() {
        let disp = vec![Point(vec![1, 0]), Point(vec![1, 1])];
        let op = TruncatedRuelleOperator::from_conditional(disp, 1, |h, a| Ok(-1.0 - 0.3 * (h[0] * a) as f64)).unwrap();
        let r = ruelle_leading_eigenvalue(&op, &[0.0, 0.0], 1000);
        assert!(r.converged && r.eigenvalue >= r.min_row_sum && r.eigenvalue <= r.max_row_sum);
        // 2x2 matrix [[e^-1, e^-1], [e^-1, e^-1.3]]
        let (a, d) = ((-1.0f64).exp(), (-1.3f64).exp());
        let exact = 0.5 * (a + d + ((a - d).powi(2) + 4.0 * a * a).sqrt());
        assert!((r.eigenvalue - exact).abs() < 1e-12);
    }
}
