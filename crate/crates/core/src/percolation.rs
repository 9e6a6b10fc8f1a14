//! Bernoulli bond percolation in a finite box with free boundary.
//!
//! Each trial draws one uniform per bond from its own ChaCha stream indexed
//! by `(seed, trial)`; a bond is open when its uniform is below `p`. Using the
//! same uniforms for every `p` couples the configurations monotonically.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OzError, Result};
use crate::lattice::Point;
use crate::stats::{wilson_interval, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercolationConfig {
    pub dim: usize,
    pub beta: f64,
    pub half_width: usize,
    pub seed: u64,
}

impl PercolationConfig {
    pub fn new(dim: usize, beta: f64, half_width: usize, seed: u64) -> Result<Self> {
        if dim == 0 || half_width == 0 {
            return Err(OzError::precondition("dimension and box half-width must be positive"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(OzError::precondition(format!("beta={beta} must be positive so that 0 < p < 1")));
        }
        Ok(PercolationConfig { dim, beta, half_width, seed })
    }

    /// Box half-width `max(2, 3 max_i |x_i|)`.
    pub fn default_half_width(points: &[&Point]) -> usize {
        let m = points.iter().flat_map(|p| p.0.iter()).map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
        (3 * m).max(2)
    }

    pub fn p(&self) -> f64 {
        -(-self.beta).exp_m1()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        PercolationConfig { beta, ..*self }
    }
}

/// Sites and bonds of the box `[-h, h]^d`.
#[derive(Debug, Clone)]
pub struct BondBox {
    dim: usize,
    half: i32,
    side: usize,
    /// Bonds as pairs of flat site indices.
    pub bonds: Vec<(u32, u32)>,
}

impl BondBox {
    pub fn new(dim: usize, half_width: usize) -> Self {
        let side = 2 * half_width + 1;
        let n = side.pow(dim as u32);
        let mut bonds = Vec::new();
        for s in 0..n {
            let mut r = s;
            let mut stride = 1;
            for _ in 0..dim {
                if r % side + 1 < side {
                    bonds.push((s as u32, (s + stride) as u32));
                }
                r /= side;
                stride *= side;
            }
        }
        BondBox { dim, half: half_width as i32, side, bonds }
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn index(&self, p: &Point) -> Option<u32> {
        if p.dim() != self.dim {
            return None;
        }
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            let c = p.0[a] + self.half;
            if c < 0 || c as usize >= self.side {
                return None;
            }
            idx = idx * self.side + c as usize;
        }
        Some(idx as u32)
    }
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }

    pub fn connected(&mut self, a: u32, b: u32) -> bool {
        self.find(a) == self.find(b)
    }
}

/// The uniforms of trial `trial`, one per bond in box order.
pub fn trial_uniforms(seed: u64, trial: u64, n_bonds: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    (0..n_bonds).map(|_| rng.random::<f64>()).collect()
}

fn clusters(bx: &BondBox, uniforms: &[f64], p: f64) -> UnionFind {
    let mut uf = UnionFind::new(bx.num_sites());
    for (&(a, b), &u) in bx.bonds.iter().zip(uniforms) {
        if u < p {
            uf.union(a, b);
        }
    }
    uf
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityEstimate {
    pub x: Point,
    pub p: f64,
    pub successes: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl ConnectivityEstimate {
    fn new(x: Point, p: f64, successes: u64, trials: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(successes, trials, Z95);
        ConnectivityEstimate { x, p, successes, trials, p_hat: successes as f64 / trials as f64, ci_lo, ci_hi }
    }
}

fn locate(bx: &BondBox, x: &Point) -> Result<u32> {
    bx.index(x).ok_or_else(|| OzError::precondition(format!("{x} lies outside the simulation box")))
}

/// Runs `trials` configurations and counts, for each beta and each target, the
/// trials with `0 <-> target`. All betas share the same uniforms.
fn coupled_counts(targets: &[Point], cfg: &PercolationConfig, betas: &[f64], trials: u64) -> Result<Vec<Vec<u64>>> {
    if trials == 0 {
        return Err(OzError::precondition("need at least one trial"));
    }
    let bx = BondBox::new(cfg.dim, cfg.half_width);
    let origin = locate(&bx, &Point::origin(cfg.dim))?;
    let idx: Vec<u32> = targets.iter().map(|t| locate(&bx, t)).collect::<Result<_>>()?;
    let ps: Vec<f64> = betas.iter().map(|&b| cfg.with_beta(b).p()).collect();
    let zero = vec![vec![0u64; idx.len()]; ps.len()];
    let counts = (0..trials)
        .into_par_iter()
        .fold(
            || zero.clone(),
            |mut acc, t| {
                let u = trial_uniforms(cfg.seed, t, bx.bonds.len());
                for (pi, &p) in ps.iter().enumerate() {
                    let mut uf = clusters(&bx, &u, p);
                    for (ti, &x) in idx.iter().enumerate() {
                        if uf.connected(origin, x) {
                            acc[pi][ti] += 1;
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || zero.clone(),
            |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    for (x, y) in ra.iter_mut().zip(rb) {
                        *x += y;
                    }
                }
                a
            },
        );
    Ok(counts)
}

/// Monte Carlo estimate of `P(0 <-> x)` with a Wilson 95% interval.
pub fn simulate_connectivity(x: &Point, cfg: &PercolationConfig, trials: u64) -> Result<ConnectivityEstimate> {
    let c = coupled_counts(std::slice::from_ref(x), cfg, &[cfg.beta], trials)?;
    Ok(ConnectivityEstimate::new(x.clone(), cfg.p(), c[0][0], trials))
}

/// Estimates at several betas from common random numbers.
pub fn connectivity_coupled(
    x: &Point,
    cfg: &PercolationConfig,
    betas: &[f64],
    trials: u64,
) -> Result<Vec<ConnectivityEstimate>> {
    let c = coupled_counts(std::slice::from_ref(x), cfg, betas, trials)?;
    Ok(betas
        .iter()
        .zip(c)
        .map(|(&b, row)| ConnectivityEstimate::new(x.clone(), cfg.with_beta(b).p(), row[0], trials))
        .collect())
}

/// Number of trials in which `0 <-> x` holds at a smaller `p` but fails at a
/// larger one. Zero under the monotone coupling.
pub fn monotonicity_violations(x: &Point, cfg: &PercolationConfig, betas: &[f64], trials: u64) -> Result<u64> {
    let bx = BondBox::new(cfg.dim, cfg.half_width);
    let o = locate(&bx, &Point::origin(cfg.dim))?;
    let xi = locate(&bx, x)?;
    let mut ps: Vec<f64> = betas.iter().map(|&b| cfg.with_beta(b).p()).collect();
    ps.sort_by(f64::total_cmp);
    let bad = (0..trials)
        .into_par_iter()
        .map(|t| {
            let u = trial_uniforms(cfg.seed, t, bx.bonds.len());
            let conn: Vec<bool> = ps.iter().map(|&p| clusters(&bx, &u, p).connected(o, xi)).collect();
            u64::from(conn.windows(2).any(|w| w[0] && !w[1]))
        })
        .sum();
    Ok(bad)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayPoint {
    pub k: usize,
    pub target: Point,
    pub estimate: ConnectivityEstimate,
    /// `-log(p_hat)/k`, absent when no trial connected.
    pub rate: Option<f64>,
    /// Rates from the interval endpoints (`rate_lo` uses `ci_hi`).
    pub rate_lo: f64,
    pub rate_hi: Option<f64>,
}

/// `-log P(0 <-> floor(k dir)) / k` for `k = 1..=k_max`. Targets with no
/// observed connection are reported with `rate = None`, never extrapolated.
pub fn decay_estimate(direction: &[f64], cfg: &PercolationConfig, k_max: usize, trials: u64) -> Result<Vec<DecayPoint>> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || direction.len() != cfg.dim {
        return Err(OzError::precondition("direction must be nonzero and match the dimension"));
    }
    let targets: Vec<(usize, Point)> = (1..=k_max)
        .map(|k| (k, Point::floor_of(&direction.iter().map(|v| v / norm * k as f64 + 1e-9).collect::<Vec<_>>())))
        .filter(|(_, p)| !p.is_origin())
        .collect();
    let pts: Vec<Point> = targets.iter().map(|t| t.1.clone()).collect();
    let counts = coupled_counts(&pts, cfg, &[cfg.beta], trials)?;
    Ok(targets
        .into_iter()
        .zip(&counts[0])
        .map(|((k, target), &s)| {
            let est = ConnectivityEstimate::new(target.clone(), cfg.p(), s, trials);
            let kf = k as f64;
            DecayPoint {
                k,
                target,
                rate: (s > 0).then(|| -est.p_hat.ln() / kf),
                rate_lo: -est.ci_hi.ln() / kf,
                rate_hi: (est.ci_lo > 0.0).then(|| -est.ci_lo.ln() / kf),
                estimate: est,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct AssociationReport {
    pub trials: u64,
    pub p_0x: f64,
    pub p_xy: f64,
    /// `P(0 <-> x and x <-> y)`.
    pub p_both: f64,
    /// `P(0 <-> x and x <-> y occur on edge-disjoint paths)`.
    pub p_disjoint: f64,
    pub product: f64,
    /// Half-width of the 95% interval for `p_both`.
    pub both_half_width: f64,
    /// Positive association holds within the interval.
    pub fkg_consistent: bool,
    /// Disjoint occurrence stays below the product within the interval.
    pub disjoint_below_product: bool,
}

/// Positive association of `{0 <-> x}` and `{x <-> y}` plus the disjoint-occurrence diagnostic.
pub fn association_check(x: &Point, y: &Point, cfg: &PercolationConfig, trials: u64) -> Result<AssociationReport> {
    if trials == 0 {
        return Err(OzError::precondition("need at least one trial"));
    }
    let bx = BondBox::new(cfg.dim, cfg.half_width);
    let o = locate(&bx, &Point::origin(cfg.dim))?;
    let xi = locate(&bx, x)?;
    let yi = locate(&bx, y)?;
    if o == xi || xi == yi || o == yi {
        return Err(OzError::precondition("0, x and y must be distinct"));
    }
    let p = cfg.p();
    let tallies = (0..trials)
        .into_par_iter()
        .map(|t| {
            let u = trial_uniforms(cfg.seed, t, bx.bonds.len());
            let mut uf = clusters(&bx, &u, p);
            let a = uf.connected(o, xi);
            let b = uf.connected(xi, yi);
            let disjoint = a && b && two_edge_disjoint(&bx, &u, p, xi, o, yi);
            [u64::from(a), u64::from(b), u64::from(a && b), u64::from(disjoint)]
        })
        .reduce(|| [0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
    let n = trials as f64;
    let p_0x = tallies[0] as f64 / n;
    let p_xy = tallies[1] as f64 / n;
    let p_both = tallies[2] as f64 / n;
    let p_disjoint = tallies[3] as f64 / n;
    let (lo, hi) = wilson_interval(tallies[2], trials, Z95);
    let half = 0.5 * (hi - lo);
    let (dlo, _) = wilson_interval(tallies[3], trials, Z95);
    let product = p_0x * p_xy;
    Ok(AssociationReport {
        trials,
        p_0x,
        p_xy,
        p_both,
        p_disjoint,
        product,
        both_half_width: half,
        fkg_consistent: hi >= product,
        disjoint_below_product: dlo <= product,
    })
}

/// Whether the open graph carries two edge-disjoint paths from `s` ending at
/// `a` and at `b` respectively (unit-capacity max flow into a joint sink).
fn two_edge_disjoint(bx: &BondBox, u: &[f64], p: f64, s: u32, a: u32, b: u32) -> bool {
    let n = bx.num_sites() + 1;
    let sink = (n - 1) as u32;
    // arcs: (to, cap, rev index)
    let mut adj: Vec<Vec<(u32, i32, usize)>> = vec![Vec::new(); n];
    let add = |adj: &mut Vec<Vec<(u32, i32, usize)>>, x: u32, y: u32, c_xy: i32, c_yx: i32| {
        let ix = adj[x as usize].len();
        let iy = adj[y as usize].len();
        adj[x as usize].push((y, c_xy, iy));
        adj[y as usize].push((x, c_yx, ix));
    };
    for (&(x, y), &w) in bx.bonds.iter().zip(u) {
        if w < p {
            add(&mut adj, x, y, 1, 1);
        }
    }
    add(&mut adj, a, sink, 1, 0);
    add(&mut adj, b, sink, 1, 0);
    let mut flow = 0;
    for _ in 0..2 {
        let mut prev: Vec<Option<(u32, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[s as usize] = true;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            if v == sink {
                break;
            }
            for (i, &(w, c, _)) in adj[v as usize].iter().enumerate() {
                if c > 0 && !seen[w as usize] {
                    seen[w as usize] = true;
                    prev[w as usize] = Some((v, i));
                    q.push_back(w);
                }
            }
        }
        if !seen[sink as usize] {
            break;
        }
        let mut v = sink;
        while let Some((pv, i)) = prev[v as usize] {
            let rev = adj[pv as usize][i].2;
            adj[pv as usize][i].1 -= 1;
            adj[v as usize][rev].1 += 1;
            v = pv;
        }
        flow += 1;
    }
    flow == 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bond_count() {
        // 5x5 box: 2 * 5 * 4 bonds
        assert_eq!(BondBox::new(2, 2).bonds.len(), 40);
        assert_eq!(BondBox::new(1, 3).bonds.len(), 6);
    }

    #[test]
    fn union_find_basic() {
        let mut uf = UnionFind::new(5);
        uf.union(0, 1);
        uf.union(3, 4);
        assert!(uf.connected(0, 1) && !uf.connected(1, 3));
        uf.union(1, 4);
        assert!(uf.connected(0, 3));
    }

    #[test]
    fn streams_are_reproducible() {
        assert_eq!(trial_uniforms(7, 3, 10), trial_uniforms(7, 3, 10));
        assert_ne!(trial_uniforms(7, 3, 10), trial_uniforms(7, 4, 10));
    }

    #[test]
    fn disjoint_paths_on_a_line() {
        // 0 -- 1 -- 2 all open: from the middle, two disjoint paths to both ends
        let bx = BondBox::new(1, 1);
        let u = vec![0.0; bx.bonds.len()];
        assert!(two_edge_disjoint(&bx, &u, 0.5, 1, 0, 2));
        // from an end, both paths need the same first bond
        assert!(!two_edge_disjoint(&bx, &u, 0.5, 0, 1, 2));
    }
}
