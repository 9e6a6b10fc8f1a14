//! Effective paths and exact bridge statistics of renewal walks built from a
//! tilted step law.
//!
//! Time is the coordinate along `x_hat`, which must be a lattice axis. A
//! bridge of length `n` is a sequence of steps from the law, conditioned to
//! hit `n x_hat` exactly; the backward table `B(x, y)` (probability to hit
//! the target from `(x, y)`) makes sampling exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::budget::Budget;
use crate::decomposition::IrreducibleDecomposition;
use crate::error::{OzError, Result};
use crate::lattice::{Path, Point};
use crate::tables::WeightTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectivePath {
    /// `u_0, u_0 + V_L, u_0 + V_L + V_1, ..., endpoint`.
    pub vertices: Vec<Point>,
}

impl EffectivePath {
    pub fn endpoint(&self) -> &Point {
        self.vertices.last().unwrap()
    }

    /// Hausdorff distance between the sites of `path` and the vertices.
    pub fn hausdorff_to(&self, path: &Path) -> f64 {
        let d = |a: &Point, b: &Point| a.sub(b).norm2();
        let one_way = |xs: &[Point], ys: &[Point]| {
            xs.iter().map(|x| ys.iter().map(|y| d(x, y)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
        };
        one_way(path.sites(), &self.vertices).max(one_way(&self.vertices, path.sites()))
    }
}

pub fn effective_path(dec: &IrreducibleDecomposition) -> EffectivePath {
    let mut vertices = vec![dec.lambda_l.start().clone()];
    for piece in dec.pieces() {
        if !piece.is_empty() {
            vertices.push(piece.end().clone());
        }
    }
    EffectivePath { vertices }
}

/// Largest Euclidean diameter among the pieces.
pub fn max_piece_diameter(dec: &IrreducibleDecomposition) -> f64 {
    dec.pieces()
        .iter()
        .map(|p| {
            let s = p.sites();
            s.iter().flat_map(|a| s.iter().map(move |b| a.sub(b).norm2())).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Window half-width factor `c` in `c sqrt(n log n)`.
pub const WINDOW_FACTOR: f64 = 4.0;

#[derive(Debug, Clone)]
struct Step {
    adv: usize,
    trans: Vec<i32>,
    p: f64,
}

/// Forward and backward hitting tables of a step law on `x`-slices `0..=n`.
#[derive(Debug, Clone)]
pub struct BridgeDp {
    n: usize,
    axis: usize,
    dim: usize,
    half: i32,
    steps: Vec<Step>,
    /// `back[x][cell]`: probability to hit `(n, 0)` from `(x, y)`.
    back: Vec<Vec<f64>>,
    /// `fwd[x][cell]`: probability that the walk from the origin visits `(x, y)`.
    fwd: Vec<Vec<f64>>,
    /// Mean advance per step along the axis.
    pub alpha: f64,
    /// Transverse step covariance divided by `alpha`.
    pub diffusivity: Vec<Vec<f64>>,
    /// Largest conditioned passage mass on the window edge over all slices.
    pub edge_mass: f64,
}

impl BridgeDp {
    /// Builds the tables; `q0` must be a probability law with every step
    /// advancing along `axis`.
    pub fn new(q0: &WeightTable, axis: usize, n: usize, budget: &Budget) -> Result<Self> {
        let dim = q0.dim().ok_or_else(|| OzError::precondition("empty step law"))?;
        if axis >= dim || n == 0 {
            return Err(OzError::precondition("axis out of range or n = 0"));
        }
        let total = q0.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OzError::precondition(format!("step law has mass {total}, not 1")));
        }
        let mut steps = Vec::new();
        for (y, p) in q0.iter() {
            if y.0[axis] < 1 {
                return Err(OzError::precondition(format!("step {y} does not advance along axis {axis}")));
            }
            let trans = (0..dim).filter(|&a| a != axis).map(|a| y.0[a]).collect();
            steps.push(Step { adv: y.0[axis] as usize, trans, p: p / total });
        }
        span_check(&steps, n)?;
        let alpha: f64 = steps.iter().map(|s| s.adv as f64 * s.p).sum();
        let k = dim - 1;
        let mut diffusivity = vec![vec![0.0; k]; k];
        for s in &steps {
            for i in 0..k {
                for j in 0..k {
                    diffusivity[i][j] += s.trans[i] as f64 * s.trans[j] as f64 * s.p / alpha;
                }
            }
        }
        let nf = n as f64;
        let reach = steps.iter().flat_map(|s| s.trans.iter().map(|t| t.unsigned_abs() as f64)).fold(0.0, f64::max) * nf;
        let half = (WINDOW_FACTOR * (nf * nf.ln().max(1.0)).sqrt()).ceil().min(reach.max(0.0)) as i32;
        let width = (2 * half + 1) as u128;
        budget.check("bridge DP cells", (n as u128 + 1) * width.pow(k as u32) * 2)?;
        let cells = width.pow(k as u32) as usize;
        let mut dp = BridgeDp {
            n,
            axis,
            dim,
            half,
            steps,
            back: vec![vec![0.0; cells]; n + 1],
            fwd: vec![vec![0.0; cells]; n + 1],
            alpha,
            diffusivity,
            edge_mass: 0.0,
        };
        let zero = dp.cell(&vec![0; k]).unwrap();
        dp.back[n][zero] = 1.0;
        for x in (0..n).rev() {
            for c in 0..cells {
                let y = dp.coords(c);
                let mut v = 0.0;
                for s in &dp.steps {
                    if x + s.adv > n {
                        continue;
                    }
                    if let Some(c2) = dp.shifted(&y, &s.trans) {
                        v += s.p * dp.back[x + s.adv][c2];
                    }
                }
                dp.back[x][c] = v;
            }
        }
        dp.fwd[0][zero] = 1.0;
        for x in 0..n {
            for c in 0..cells {
                let f = dp.fwd[x][c];
                if f == 0.0 {
                    continue;
                }
                let y = dp.coords(c);
                for s in &dp.steps {
                    if x + s.adv > n {
                        continue;
                    }
                    if let Some(c2) = dp.shifted(&y, &s.trans) {
                        dp.fwd[x + s.adv][c2] += f * s.p;
                    }
                }
            }
        }
        let z = dp.back[0][zero];
        if !(z > 0.0) {
            return Err(OzError::precondition(format!("target ({n} along axis {axis}, 0) is not reachable by the step law")));
        }
        let mut edge: f64 = 0.0;
        for x in 0..=n {
            let m: f64 = (0..cells)
                .filter(|&c| dp.coords(c).iter().any(|v| v.abs() == half))
                .map(|c| dp.fwd[x][c] * dp.back[x][c] / z)
                .sum();
            edge = edge.max(m);
        }
        dp.edge_mass = edge;
        Ok(dp)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> i32 {
        self.half
    }

    /// Probability that the unconditioned walk hits the target.
    pub fn hit_probability(&self) -> f64 {
        self.back[0][self.cell(&vec![0; self.dim - 1]).unwrap()]
    }

    fn cell(&self, y: &[i32]) -> Option<usize> {
        let w = 2 * self.half + 1;
        let mut idx = 0usize;
        for &v in y {
            if v.abs() > self.half {
                return None;
            }
            idx = idx * w as usize + (v + self.half) as usize;
        }
        Some(idx)
    }

    fn coords(&self, mut c: usize) -> Vec<i32> {
        let w = (2 * self.half + 1) as usize;
        let mut out = vec![0; self.dim - 1];
        for v in out.iter_mut().rev() {
            *v = (c % w) as i32 - self.half;
            c /= w;
        }
        out
    }

    fn shifted(&self, y: &[i32], t: &[i32]) -> Option<usize> {
        let w = (2 * self.half + 1) as usize;
        let mut idx = 0usize;
        for (a, b) in y.iter().zip(t) {
            let v = a + b;
            if v.abs() > self.half {
                return None;
            }
            idx = idx * w + (v + self.half) as usize;
        }
        Some(idx)
    }

    /// Conditional probability that the bridge has a vertex at `v`.
    pub fn passage(&self, v: &Point) -> Option<f64> {
        if v.dim() != self.dim {
            return None;
        }
        let x = v.0[self.axis];
        if x < 0 || x as usize > self.n {
            return Some(0.0);
        }
        let y: Vec<i32> = (0..self.dim).filter(|&a| a != self.axis).map(|a| v.0[a]).collect();
        let c = self.cell(&y)?;
        Some(self.fwd[x as usize][c] * self.back[x as usize][c] / self.hit_probability())
    }

    /// Exact law of the piecewise-constant transverse position at slice `x`:
    /// the last vertex at or before `x`.
    pub fn slice_law(&self, x: usize) -> Vec<(Vec<i32>, f64)> {
        let z = self.hit_probability();
        let cells = self.back[0].len();
        let mut law = vec![0.0; cells];
        for x0 in x.saturating_sub(self.max_adv())..=x {
            for c in 0..cells {
                let f = self.fwd[x0][c];
                if f == 0.0 {
                    continue;
                }
                if x0 == x {
                    law[c] += f * self.back[x][c] / z;
                    continue;
                }
                let y = self.coords(c);
                for s in &self.steps {
                    let x1 = x0 + s.adv;
                    if x1 > x && x1 <= self.n {
                        if let Some(c2) = self.shifted(&y, &s.trans) {
                            law[c] += f * s.p * self.back[x1][c2] / z;
                        }
                    }
                }
            }
        }
        (0..cells).filter(|&c| law[c] > 0.0).map(|c| (self.coords(c), law[c])).collect()
    }

    fn max_adv(&self) -> usize {
        self.steps.iter().map(|s| s.adv).max().unwrap_or(1)
    }

    /// One exact bridge, recorded at the slices in `grid` (transverse coordinates).
    fn sample(&self, rng: &mut ChaCha8Rng, grid: &[usize]) -> (Vec<Vec<i32>>, bool, usize) {
        let k = self.dim - 1;
        let mut x = 0usize;
        let mut y = vec![0i32; k];
        let mut c = self.cell(&y).unwrap();
        let mut out = Vec::with_capacity(grid.len());
        let mut gi = 0;
        let mut max_adv = 0;
        while x < self.n {
            let b = self.back[x][c];
            let u: f64 = rng.random::<f64>() * b;
            let mut acc = 0.0;
            let mut chosen = None;
            for s in &self.steps {
                if x + s.adv > self.n {
                    continue;
                }
                if let Some(c2) = self.shifted(&y, &s.trans) {
                    let w = s.p * self.back[x + s.adv][c2];
                    if w == 0.0 {
                        continue;
                    }
                    chosen = Some((s, c2));
                    acc += w;
                    if u < acc {
                        break;
                    }
                }
            }
            let (s, c2) = chosen.expect("positive backward weight has a continuation");
            let x1 = x + s.adv;
            while gi < grid.len() && grid[gi] < x1 {
                out.push(y.clone());
                gi += 1;
            }
            x = x1;
            for (a, t) in y.iter_mut().zip(&s.trans) {
                *a += t;
            }
            c = c2;
            max_adv = max_adv.max(s.adv);
        }
        while gi < grid.len() {
            out.push(y.clone());
            gi += 1;
        }
        let exact = x == self.n && y.iter().all(|&v| v == 0);
        (out, exact, max_adv)
    }
}

fn span_check(steps: &[Step], n: usize) -> Result<()> {
    let g = steps.iter().fold(0usize, |g, s| gcd(g, s.adv));
    if !n.is_multiple_of(g) {
        return Err(OzError::precondition(format!(
            "advances along the axis are multiples of {g}, so slice {n} is unreachable"
        )));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Diffusively scaled bridges recorded on a `tau` grid.
#[derive(Debug, Clone, Serialize)]
pub struct BridgeBatch {
    pub n: usize,
    pub tau: Vec<f64>,
    /// `samples[s][g][l]`: component `l` at grid point `g`, already divided by `sqrt(n)`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// Samples whose endpoint missed the target (must be 0).
    pub endpoint_failures: usize,
    /// Fraction of samples with a step longer than `(log n)^2` along the axis.
    pub long_step_fraction: f64,
    pub window: i32,
    pub edge_mass: f64,
}

pub const SAMPLE_BLOCK: usize = 1000;

/// `samples` exact bridges on the grid `tau_k = k / grid_points`, `k = 0..=grid_points`.
/// Blocks of samples use independent streams of the seed, so the output
/// does not depend on the thread count.
pub fn bridge_sampler(dp: &BridgeDp, samples: usize, grid_points: usize, seed: u64) -> BridgeBatch {
    let n = dp.n;
    let tau: Vec<f64> = (0..=grid_points).map(|k| k as f64 / grid_points as f64).collect();
    let grid: Vec<usize> = tau.iter().map(|t| (t * n as f64).floor() as usize).collect();
    let blocks = samples.div_ceil(SAMPLE_BLOCK);
    let long = (n as f64).ln().powi(2);
    let scale = 1.0 / (n as f64).sqrt();
    let results: Vec<(Vec<Vec<Vec<f64>>>, usize, usize)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = SAMPLE_BLOCK.min(samples - b * SAMPLE_BLOCK);
            let mut out = Vec::with_capacity(count);
            let (mut fails, mut longs) = (0, 0);
            for _ in 0..count {
                let (traj, exact, max_adv) = dp.sample(&mut rng, &grid);
                fails += usize::from(!exact);
                longs += usize::from(max_adv as f64 > long);
                out.push(traj.into_iter().map(|y| y.into_iter().map(|v| v as f64 * scale).collect()).collect());
            }
            (out, fails, longs)
        })
        .collect();
    let mut batch = BridgeBatch {
        n,
        tau,
        samples: Vec::with_capacity(samples),
        endpoint_failures: 0,
        long_step_fraction: 0.0,
        window: dp.half,
        edge_mass: dp.edge_mass,
    };
    let mut longs = 0;
    for (s, f, l) in results {
        batch.samples.extend(s);
        batch.endpoint_failures += f;
        longs += l;
    }
    batch.long_step_fraction = longs as f64 / samples.max(1) as f64;
    batch
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub tau: f64,
    pub component: usize,
    pub empirical_var: f64,
    pub predicted_var: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceProfile {
    pub rows: Vec<ProfileRow>,
    /// Largest `|empirical - predicted| / predicted` over interior grid points.
    pub max_rel_deviation: f64,
    /// Largest `|Cov(tau, tau') - kappa tau (1 - tau')| / (kappa tau (1 - tau'))` over interior pairs.
    pub max_cov_rel_deviation: f64,
    /// Largest `|mean| / stderr(mean)` over grid points and components.
    pub max_mean_z: f64,
    /// Largest absolute empirical correlation between distinct components.
    pub max_cross_correlation: f64,
}

/// Empirical variances in the frame `directions` (ambient vectors; the axis
/// component is dropped) against `kappa_l tau (1 - tau)`.
pub fn variance_profile(batch: &BridgeBatch, kappas: &[f64], directions: &[Vec<f64>], axis: usize) -> Result<VarianceProfile> {
    if batch.samples.is_empty() {
        return Err(OzError::precondition("empty batch"));
    }
    let k = batch.samples[0][0].len();
    if kappas.len() != k || directions.len() != k {
        return Err(OzError::precondition("need one curvature and one direction per transverse component"));
    }
    let frame: Vec<Vec<f64>> = directions
        .iter()
        .map(|d| d.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, v)| *v).collect())
        .collect();
    let ns = batch.samples.len() as f64;
    let g = batch.tau.len();
    // projected[s][g][l]
    let projected: Vec<Vec<Vec<f64>>> = batch
        .samples
        .iter()
        .map(|traj| traj.iter().map(|y| frame.iter().map(|v| v.iter().zip(y).map(|(a, b)| a * b).sum()).collect()).collect())
        .collect();
    let mean = |gi: usize, l: usize| projected.iter().map(|s| s[gi][l]).sum::<f64>() / ns;
    let mut rows = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut max_mean_z: f64 = 0.0;
    let mut means = vec![vec![0.0; k]; g];
    for gi in 0..g {
        for l in 0..k {
            let mu = mean(gi, l);
            means[gi][l] = mu;
            let m2 = projected.iter().map(|s| (s[gi][l] - mu).powi(2)).sum::<f64>() / ns;
            let m4 = projected.iter().map(|s| (s[gi][l] - mu).powi(4)).sum::<f64>() / ns;
            let tau = batch.tau[gi];
            let predicted = kappas[l] * tau * (1.0 - tau);
            let stderr = ((m4 - m2 * m2).max(0.0) / ns).sqrt();
            if predicted > 0.0 {
                max_rel = max_rel.max((m2 - predicted).abs() / predicted);
            }
            if m2 > 0.0 {
                max_mean_z = max_mean_z.max(mu.abs() / (m2 / ns).sqrt());
            }
            rows.push(ProfileRow { tau, component: l, empirical_var: m2, predicted_var: predicted, stderr });
        }
    }
    let mut max_cov: f64 = 0.0;
    for a in 1..g - 1 {
        for b in a + 1..g - 1 {
            for l in 0..k {
                let c = projected.iter().map(|s| (s[a][l] - means[a][l]) * (s[b][l] - means[b][l])).sum::<f64>() / ns;
                let pred = kappas[l] * batch.tau[a] * (1.0 - batch.tau[b]);
                if pred > 0.0 {
                    max_cov = max_cov.max((c - pred).abs() / pred);
                }
            }
        }
    }
    let mut max_cross: f64 = 0.0;
    for gi in 1..g - 1 {
        for l in 0..k {
            for l2 in l + 1..k {
                let c = projected.iter().map(|s| (s[gi][l] - means[gi][l]) * (s[gi][l2] - means[gi][l2])).sum::<f64>() / ns;
                let v1 = projected.iter().map(|s| (s[gi][l] - means[gi][l]).powi(2)).sum::<f64>() / ns;
                let v2 = projected.iter().map(|s| (s[gi][l2] - means[gi][l2]).powi(2)).sum::<f64>() / ns;
                if v1 > 0.0 && v2 > 0.0 {
                    max_cross = max_cross.max((c / (v1 * v2).sqrt()).abs());
                }
            }
        }
    }
    Ok(VarianceProfile { rows, max_rel_deviation: max_rel, max_cov_rel_deviation: max_cov, max_mean_z, max_cross_correlation: max_cross })
}

/// Exact variance of the scaled transverse position at `tau`, from the DP tables.
pub fn exact_variance(dp: &BridgeDp, tau: f64) -> Vec<f64> {
    let x = (tau * dp.n as f64).floor() as usize;
    let law = dp.slice_law(x);
    let k = dp.dim - 1;
    (0..k)
        .map(|l| {
            let m1: f64 = law.iter().map(|(y, p)| y[l] as f64 * p).sum();
            let m2: f64 = law.iter().map(|(y, p)| (y[l] as f64).powi(2) * p).sum();
            (m2 - m1 * m1) / dp.n as f64
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PassageReport {
    pub v: Point,
    pub probability: f64,
    pub reachable: bool,
    /// `(1/alpha) prod_l exp(-a_l^2 / (2 D_l n s)) / sqrt(2 pi D_l n s)` with `s = lambda (1 - lambda)`.
    pub gaussian: Option<f64>,
    pub relative_difference: Option<f64>,
}

/// Probability that the conditioned walk passes through `v`, with the Gaussian surrogate.
pub fn passage_probability(dp: &BridgeDp, v: &Point) -> PassageReport {
    let p = dp.passage(v);
    let reachable = p.is_some_and(|p| p > 0.0);
    let probability = p.unwrap_or(0.0);
    let x = v.0.get(dp.axis).copied().unwrap_or(0);
    let lambda = x as f64 / dp.n as f64;
    let gaussian = (lambda > 0.0 && lambda < 1.0).then(|| {
        let s = lambda * (1.0 - lambda) * dp.n as f64;
        let a: Vec<f64> = (0..dp.dim).filter(|&i| i != dp.axis).map(|i| v.0[i] as f64).collect();
        let mut g = 1.0 / dp.alpha;
        for (l, al) in a.iter().enumerate() {
            let d = dp.diffusivity[l][l];
            g *= (-(al * al) / (2.0 * d * s)).exp() / (2.0 * std::f64::consts::PI * d * s).sqrt();
        }
        g
    });
    let relative_difference = gaussian.filter(|_| probability > 0.0).map(|g| (g - probability).abs() / probability);
    PassageReport { v: v.clone(), probability, reachable, gaussian, relative_difference }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renewal::SyntheticStepModel;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    fn lazy_q0() -> WeightTable {
        let m = SyntheticStepModel::lazy_walk(0.3).unwrap();
        m.w0().tilt(&m.t_hat()).unwrap()
    }

    #[test]
    fn lazy_passage_at_midpoint() {
        let dp = BridgeDp::new(&lazy_q0(), 0, 4, &Budget::default()).unwrap();
        assert!((dp.hit_probability() - 70.0 / 256.0).abs() < 1e-15);
        let r = passage_probability(&dp, &p(&[2, 0]));
        let exact = (3.0f64 / 8.0).powi(2) / (70.0 / 256.0);
        assert!((r.probability - exact).abs() < 1e-15);
        assert!((passage_probability(&dp, &p(&[4, 0])).probability - 1.0).abs() < 1e-15);
        assert_eq!(passage_probability(&dp, &p(&[2, 3])).probability, 0.0);
    }

    #[test]
    fn deterministic_law_gives_flat_bridges() {
        let mut q = WeightTable::new(crate::tables::TableKind::Q0, 1);
        q.add(p(&[1, 0]), 1.0);
        let dp = BridgeDp::new(&q, 0, 10, &Budget::default()).unwrap();
        let b = bridge_sampler(&dp, 50, 10, 3);
        assert!(b.samples.iter().all(|s| s.iter().all(|y| y[0] == 0.0)));
    }

    #[test]
    fn unreachable_slice_is_refused() {
        let mut q = WeightTable::new(crate::tables::TableKind::Q0, 2);
        q.add(p(&[2, 0]), 0.5);
        q.add(p(&[2, 2]), 0.5);
        assert!(BridgeDp::new(&q, 0, 5, &Budget::default()).is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_pinned() {
        let dp = BridgeDp::new(&lazy_q0(), 0, 40, &Budget::default()).unwrap();
        let a = bridge_sampler(&dp, 2500, 8, 11);
        let b = bridge_sampler(&dp, 2500, 8, 11);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.endpoint_failures, 0);
        assert!(a.samples.iter().all(|s| s[0][0] == 0.0 && s[8][0] == 0.0));
    }

    #[test]
    fn exact_variance_matches_brownian_bridge() {
        let dp = BridgeDp::new(&lazy_q0(), 0, 400, &Budget::default()).unwrap();
        let v = exact_variance(&dp, 0.5)[0];
        // lazy walk: per-step variance 1/2, bridge variance n/4 * 1/2 - finite-n correction
        assert!((v - 0.125).abs() < 1e-3, "{v}");
    }
}
