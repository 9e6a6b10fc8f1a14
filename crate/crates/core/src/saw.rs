//! Exhaustive self-avoiding walk enumeration with a length cutoff.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::budget::Budget;
use crate::error::{OzError, Result};
use crate::lattice::{Path, Point};
use crate::stats::{least_squares, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SawEnsemble {
    pub dim: usize,
    pub beta: f64,
    pub max_len: usize,
}

impl SawEnsemble {
    /// Subcritical ensemble; `beta >= 0` is refused.
    pub fn new(dim: usize, beta: f64, max_len: usize) -> Result<Self> {
        if beta >= 0.0 {
            return Err(OzError::precondition(format!(
                "beta={beta} is not negative; the walk sum is only meaningful below criticality (override available)"
            )));
        }
        Self::unchecked(dim, beta, max_len)
    }

    /// Same as [`SawEnsemble::new`] but accepts any finite `beta`.
    pub fn unchecked(dim: usize, beta: f64, max_len: usize) -> Result<Self> {
        if dim == 0 {
            return Err(OzError::precondition("dimension must be at least 1"));
        }
        if max_len == 0 {
            return Err(OzError::precondition("cutoff must be at least 1"));
        }
        if !beta.is_finite() {
            return Err(OzError::precondition("beta must be finite"));
        }
        Ok(SawEnsemble { dim, beta, max_len })
    }

    /// Upper bound `sum_n 2d (2d-1)^(n-1)` on the number of walks.
    pub fn walk_bound(&self) -> u128 {
        let z = 2 * self.dim as u128;
        let mut term = z;
        let mut total: u128 = 0;
        for _ in 0..self.max_len {
            total = total.saturating_add(term);
            term = term.saturating_mul(z - 1);
        }
        total
    }
}

/// Cubic box of side `2L+1` around an origin, with flat site indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SawBox {
    dim: usize,
    radius: i32,
    side: usize,
    origin: Vec<i32>,
    offsets: Vec<isize>,
}

impl SawBox {
    pub fn new(origin: &Point, radius: usize) -> Self {
        let dim = origin.dim();
        let side = 2 * radius + 1;
        let mut strides = vec![1isize; dim];
        for a in 1..dim {
            strides[a] = strides[a - 1] * side as isize;
        }
        // edge order: by axis, negative before positive
        let offsets = (0..dim).flat_map(|a| [-strides[a], strides[a]]).collect();
        SawBox { dim, radius: radius as i32, side, origin: origin.0.clone(), offsets }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn center(&self) -> u32 {
        ((self.num_sites() - 1) / 2) as u32
    }

    pub fn coords(&self, idx: u32) -> Vec<i32> {
        let mut r = idx as usize;
        let mut out = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            out.push((r % self.side) as i32 - self.radius + self.origin[a]);
            r /= self.side;
        }
        out
    }

    pub fn index(&self, p: &[i32]) -> Option<u32> {
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            let c = p[a] - self.origin[a] + self.radius;
            if c < 0 || c as usize >= self.side {
                return None;
            }
            idx = idx * self.side + c as usize;
        }
        Some(idx as u32)
    }
}

/// A walk under construction, viewed by visitors.
pub struct Walk<'a> {
    pub sites: &'a [u32],
    pub bx: &'a SawBox,
}

impl Walk<'_> {
    pub fn len(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.sites.len() == 1
    }

    pub fn end_index(&self) -> u32 {
        *self.sites.last().unwrap()
    }

    pub fn to_path(&self) -> Path {
        Path::new(self.sites.iter().map(|&s| Point(self.bx.coords(s))).collect()).expect("walk is a path")
    }
}

/// Per-task accumulator for enumeration. Tasks are merged in prefix order.
pub trait WalkVisitor: Send {
    fn visit(&mut self, walk: &Walk<'_>);
    fn merge(&mut self, other: Self)
    where
        Self: Sized;
}

const PREFIX_DEPTH: usize = 3;

fn dfs<V: WalkVisitor>(bx: &SawBox, visited: &mut [bool], stack: &mut Vec<u32>, max_len: usize, v: &mut V) {
    let cur = *stack.last().unwrap() as isize;
    for &off in &bx.offsets {
        let nx = (cur + off) as usize;
        if visited[nx] {
            continue;
        }
        visited[nx] = true;
        stack.push(nx as u32);
        v.visit(&Walk { sites: stack, bx });
        if stack.len() <= max_len {
            dfs(bx, visited, stack, max_len, v);
        }
        stack.pop();
        visited[nx] = false;
    }
}

fn collect_prefixes(bx: &SawBox, visited: &mut [bool], stack: &mut Vec<u32>, depth: usize, out: &mut Vec<Vec<u32>>) {
    if stack.len() - 1 == depth {
        out.push(stack.clone());
        return;
    }
    let cur = *stack.last().unwrap() as isize;
    for &off in &bx.offsets {
        let nx = (cur + off) as usize;
        if visited[nx] {
            continue;
        }
        visited[nx] = true;
        stack.push(nx as u32);
        collect_prefixes(bx, visited, stack, depth, out);
        stack.pop();
        visited[nx] = false;
    }
}

/// Visits every self-avoiding walk from `origin` with `1 <= length <= max_len`
/// exactly once. Returns the merged visitor and the number of walks.
///
/// With `parallel`, the search is split at prefix depth 3 and the per-prefix
/// visitors are merged in prefix order, so results do not depend on scheduling.
pub fn enumerate_saws<V, F>(
    origin: &Point,
    ens: &SawEnsemble,
    budget: &Budget,
    make: F,
    parallel: bool,
) -> Result<(V, u64)>
where
    V: WalkVisitor,
    F: Fn() -> V + Sync,
{
    if origin.dim() != ens.dim {
        return Err(OzError::precondition("origin dimension differs from ensemble dimension"));
    }
    budget.check("self-avoiding walks", ens.walk_bound())?;
    let bx = SawBox::new(origin, ens.max_len);
    let start = bx.center();
    let mut counter = Counting { inner: make(), count: 0 };
    if !parallel || ens.max_len <= PREFIX_DEPTH {
        let mut visited = vec![false; bx.num_sites()];
        visited[start as usize] = true;
        let mut stack = vec![start];
        dfs(&bx, &mut visited, &mut stack, ens.max_len, &mut counter);
        return Ok((counter.inner, counter.count));
    }
    // Short walks are visited by the driver; each prefix of length 3 seeds a task.
    let short = SawEnsemble { max_len: PREFIX_DEPTH - 1, ..*ens };
    {
        let mut visited = vec![false; bx.num_sites()];
        visited[start as usize] = true;
        let mut stack = vec![start];
        dfs(&bx, &mut visited, &mut stack, short.max_len, &mut counter);
    }
    let mut prefixes = Vec::new();
    {
        let mut visited = vec![false; bx.num_sites()];
        visited[start as usize] = true;
        let mut stack = vec![start];
        collect_prefixes(&bx, &mut visited, &mut stack, PREFIX_DEPTH, &mut prefixes);
    }
    let results: Vec<Counting<V>> = prefixes
        .par_iter()
        .map(|prefix| {
            let mut visited = vec![false; bx.num_sites()];
            for &s in prefix {
                visited[s as usize] = true;
            }
            let mut stack = prefix.clone();
            let mut c = Counting { inner: make(), count: 0 };
            c.visit(&Walk { sites: &stack, bx: &bx });
            dfs(&bx, &mut visited, &mut stack, ens.max_len, &mut c);
            c
        })
        .collect();
    for r in results {
        counter.merge(r);
    }
    Ok((counter.inner, counter.count))
}

struct Counting<V> {
    inner: V,
    count: u64,
}

impl<V: WalkVisitor> WalkVisitor for Counting<V> {
    fn visit(&mut self, walk: &Walk<'_>) {
        self.count += 1;
        self.inner.visit(walk);
    }
    fn merge(&mut self, other: Self) {
        self.count += other.count;
        self.inner.merge(other.inner);
    }
}

/// Walk counts by length, per endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Census {
    pub max_len: usize,
    /// `by_length[n]` = number of walks of length `n` (index 0 unused).
    pub by_length: Vec<u64>,
    /// Flat `[endpoint][length]` table over the enumeration box.
    by_endpoint: Vec<u64>,
    bx: SawBox,
}

impl WalkVisitor for Census {
    fn visit(&mut self, walk: &Walk<'_>) {
        let n = walk.len();
        self.by_length[n] += 1;
        self.by_endpoint[walk.end_index() as usize * (self.max_len + 1) + n] += 1;
    }
    fn merge(&mut self, other: Self) {
        for (a, b) in self.by_length.iter_mut().zip(other.by_length) {
            *a += b;
        }
        for (a, b) in self.by_endpoint.iter_mut().zip(other.by_endpoint) {
            *a += b;
        }
    }
}

impl Census {
    fn empty(origin: &Point, max_len: usize) -> Self {
        let bx = SawBox::new(origin, max_len);
        Census { max_len, by_length: vec![0; max_len + 1], by_endpoint: vec![0; bx.num_sites() * (max_len + 1)], bx }
    }

    pub fn run(ens: &SawEnsemble, budget: &Budget, parallel: bool) -> Result<Self> {
        let origin = Point::origin(ens.dim);
        let (census, _) = enumerate_saws(&origin, ens, budget, || Census::empty(&origin, ens.max_len), parallel)?;
        Ok(census)
    }

    /// Number of walks of each length ending at `x` (index = length).
    pub fn counts_to(&self, x: &Point) -> Vec<u64> {
        match self.bx.index(&x.0) {
            Some(i) => {
                let i = i as usize * (self.max_len + 1);
                self.by_endpoint[i..i + self.max_len + 1].to_vec()
            }
            None => vec![0; self.max_len + 1],
        }
    }

    /// `log g(x)` at inverse temperature `beta`; `-inf` when no walk reaches `x`.
    pub fn log_two_point(&self, x: &Point, beta: f64) -> f64 {
        let terms: Vec<f64> = self
            .counts_to(x)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(n, &c)| (c as f64).ln() + beta * n as f64)
            .collect();
        log_sum_exp(&terms)
    }

    /// All endpoints reached, in site order.
    pub fn endpoints(&self) -> Vec<Point> {
        let stride = self.max_len + 1;
        let mut out: Vec<Point> = (0..self.bx.num_sites())
            .filter(|&i| self.by_endpoint[i * stride..(i + 1) * stride].iter().any(|&c| c > 0))
            .map(|i| Point(self.bx.coords(i as u32)))
            .collect();
        out.sort();
        out
    }
}

fn reject_origin(x: &Point) -> Result<()> {
    if x.is_origin() {
        Err(OzError::precondition("the two-point function is defined for x != 0"))
    } else {
        Ok(())
    }
}

/// Truncated `g(x) = sum_{w: 0 -> x, |w| <= L} e^{beta |w|}`.
pub fn two_point(x: &Point, ens: &SawEnsemble, budget: &Budget) -> Result<f64> {
    reject_origin(x)?;
    if x.dim() != ens.dim {
        return Err(OzError::precondition("point dimension differs from ensemble dimension"));
    }
    let census = Census::run(ens, budget, true)?;
    Ok(census.log_two_point(x, ens.beta).exp())
}

/// Truncated two-point function on every reachable site.
#[derive(Debug, Clone, Serialize)]
pub struct TwoPointTable {
    pub cutoff: usize,
    pub beta: f64,
    pub entries: BTreeMap<Point, f64>,
}

pub fn two_point_table(ens: &SawEnsemble, budget: &Budget) -> Result<TwoPointTable> {
    let census = Census::run(ens, budget, true)?;
    let entries = census
        .endpoints()
        .into_iter()
        .filter(|p| !p.is_origin())
        .map(|p| {
            let g = census.log_two_point(&p, ens.beta).exp();
            (p, g)
        })
        .collect();
    Ok(TwoPointTable { cutoff: ens.max_len, beta: ens.beta, entries })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationLengthReport {
    pub direction: Vec<f64>,
    pub cutoff: usize,
    /// `(k, -log g(floor(k dir)) / k)` for every `k` with a nonzero value.
    pub sequence: Vec<(usize, f64)>,
    /// `k` at which no walk within the cutoff reaches `floor(k dir)`.
    pub unreachable: Vec<usize>,
    /// Least-squares fit of `xi + a log(k)/k + b/k`; falls back to the last value.
    pub estimate: f64,
    pub fit: Option<[f64; 3]>,
    pub monotone_decreasing: bool,
    pub monotone_increasing: bool,
}

/// Finite-`k` estimates of the decay rate along `direction`.
pub fn correlation_length(
    direction: &[f64],
    ens: &SawEnsemble,
    k_max: usize,
    budget: &Budget,
) -> Result<CorrelationLengthReport> {
    let census = Census::run(ens, budget, true)?;
    correlation_length_from(&census, direction, ens.beta, k_max)
}

pub fn correlation_length_from(
    census: &Census,
    direction: &[f64],
    beta: f64,
    k_max: usize,
) -> Result<CorrelationLengthReport> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || k_max == 0 {
        return Err(OzError::precondition("need a nonzero direction and k_max >= 1"));
    }
    let dir: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let mut sequence = Vec::new();
    let mut unreachable = Vec::new();
    for k in 1..=k_max {
        let target = Point::floor_of(&dir.iter().map(|v| v * k as f64 + 1e-9).collect::<Vec<_>>());
        if target.is_origin() {
            continue;
        }
        let lg = census.log_two_point(&target, beta);
        if lg.is_finite() {
            sequence.push((k, -lg / k as f64));
        } else {
            unreachable.push(k);
        }
    }
    if sequence.is_empty() {
        return Err(OzError::precondition("cutoff too small: no target along the ray is reachable"));
    }
    let fit = if sequence.len() >= 3 {
        let rows: Vec<Vec<f64>> = sequence
            .iter()
            .map(|&(k, _)| {
                let k = k as f64;
                vec![1.0, k.ln() / k, 1.0 / k]
            })
            .collect();
        let ys: Vec<f64> = sequence.iter().map(|s| s.1).collect();
        least_squares(&rows, &ys).map(|c| [c[0], c[1], c[2]])
    } else {
        None
    };
    let estimate = fit.map(|f| f[0]).unwrap_or(sequence.last().unwrap().1);
    let monotone_decreasing = sequence.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15);
    let monotone_increasing = sequence.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-15);
    Ok(CorrelationLengthReport {
        direction: dir,
        cutoff: census.max_len,
        sequence,
        unreachable,
        estimate,
        fit,
        monotone_decreasing,
        monotone_increasing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SplittingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

struct ThroughVisitor {
    through: u32,
    target: u32,
    counts: Vec<u64>,
}

impl WalkVisitor for ThroughVisitor {
    fn visit(&mut self, walk: &Walk<'_>) {
        if walk.end_index() == self.target && walk.sites.contains(&self.through) {
            self.counts[walk.len()] += 1;
        }
    }
    fn merge(&mut self, other: Self) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

/// Compares the weight of walks `0 -> y` through `x` with `g(x) g(y - x)`.
pub fn splitting_check(x: &Point, y: &Point, ens: &SawEnsemble, budget: &Budget) -> Result<SplittingReport> {
    if x.is_origin() || y.is_origin() || x == y {
        return Err(OzError::precondition("0, x and y must be distinct"));
    }
    let origin = Point::origin(ens.dim);
    let bx = SawBox::new(&origin, ens.max_len);
    let (Some(through), Some(target)) = (bx.index(&x.0), bx.index(&y.0)) else {
        // out of reach: both sides vanish at this cutoff
        let census = Census::run(ens, budget, true)?;
        let rhs = (census.log_two_point(x, ens.beta) + census.log_two_point(&y.sub(x), ens.beta)).exp();
        return Ok(SplittingReport { lhs: 0.0, rhs, holds: true });
    };
    let (tv, _) = enumerate_saws(
        &origin,
        ens,
        budget,
        || ThroughVisitor { through, target, counts: vec![0; ens.max_len + 1] },
        true,
    )?;
    let terms: Vec<f64> = tv
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| (c as f64).ln() + ens.beta * n as f64)
        .collect();
    let lhs = log_sum_exp(&terms).exp();
    let census = Census::run(ens, budget, true)?;
    let rhs = (census.log_two_point(x, ens.beta) + census.log_two_point(&y.sub(x), ens.beta)).exp();
    Ok(SplittingReport { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) })
}

/// Finite-energy bound for walk weights, `e^{beta n} >= e^{-c2 n}` for every
/// length `n` up to the cutoff. Holds with equality at `c2 = -beta`.
pub fn finite_energy_holds(ens: &SawEnsemble, c2: f64) -> bool {
    (1..=ens.max_len).all(|n| ens.beta * n as f64 >= -c2 * n as f64)
}

/// All self-avoiding walks `0 -> x` with length at most the cutoff, in DFS order.
pub fn walks_to(x: &Point, ens: &SawEnsemble, budget: &Budget) -> Result<Vec<Path>> {
    struct Collect {
        target: Option<u32>,
        out: Vec<Path>,
    }
    impl WalkVisitor for Collect {
        fn visit(&mut self, walk: &Walk<'_>) {
            if Some(walk.end_index()) == self.target {
                self.out.push(walk.to_path());
            }
        }
        fn merge(&mut self, other: Self) {
            self.out.extend(other.out);
        }
    }
    let origin = Point::origin(ens.dim);
    let target = SawBox::new(&origin, ens.max_len).index(&x.0);
    let (c, _) = enumerate_saws(&origin, ens, budget, || Collect { target, out: Vec::new() }, false)?;
    Ok(c.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(d: usize, beta: f64, l: usize) -> SawEnsemble {
        SawEnsemble::new(d, beta, l).unwrap()
    }

    #[test]
    fn counts_d2() {
        let c = Census::run(&ens(2, -1.0, 4), &Budget::default(), false).unwrap();
        assert_eq!(&c.by_length[1..], &[4, 12, 36, 100]);
    }

    #[test]
    fn d1_unique_path() {
        let e = ens(1, -1.0, 5);
        let g = two_point(&Point(vec![3]), &e, &Budget::default()).unwrap();
        assert!((g - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn neighbour_weight_d2() {
        let b = -0.7;
        let g = two_point(&Point(vec![1, 0]), &ens(2, b, 3), &Budget::default()).unwrap();
        let expected = b.exp() + 2.0 * (3.0 * b).exp();
        assert!((g - expected).abs() < 1e-14);
    }

    #[test]
    fn rejects_origin_and_nonnegative_beta() {
        assert!(two_point(&Point(vec![0, 0]), &ens(2, -1.0, 3), &Budget::default()).is_err());
        assert!(SawEnsemble::new(2, 0.0, 3).is_err());
        assert!(SawEnsemble::unchecked(2, 0.1, 3).is_ok());
    }

    #[test]
    fn budget_refusal() {
        let err = Census::run(&ens(2, -1.0, 10), &Budget::new(1000), false).unwrap_err();
        assert!(matches!(err, OzError::Budget { .. }));
    }

    #[test]
    fn splitting_d1_equality() {
        let e = ens(1, -0.5, 6);
        let r = splitting_check(&Point(vec![2]), &Point(vec![5]), &e, &Budget::default()).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-15 && r.holds);
        assert!((r.lhs - (-2.5f64).exp()).abs() < 1e-15);
    }
}
