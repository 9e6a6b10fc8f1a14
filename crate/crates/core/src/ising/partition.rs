//! Partition functions and correlations by three independent routes: the
//! high-temperature diagram sum (over all subsets or over the cycle space),
//! the transfer matrix in one and two dimensions, and raw spin summation.

use std::collections::HashMap;
use std::collections::VecDeque;

use serde::Serialize;

use super::{iter_bits, EdgeSet, Mask};
use crate::budget::Budget;
use crate::error::{OzError, Result};
use crate::lattice::Point;

/// Even subgraphs of an edge subset, as the span of fundamental cycles of a
/// spanning forest. Also yields every diagram with a prescribed boundary.
#[derive(Debug, Clone)]
pub struct CycleSpace {
    pub basis: Vec<Mask>,
    /// Edges of the forest path from each vertex to its component root.
    root_path: Vec<Mask>,
    component: Vec<usize>,
    n_components: usize,
}

impl CycleSpace {
    pub fn new(set: &EdgeSet, mask: Mask) -> Self {
        let n = set.num_vertices();
        let mut component = vec![usize::MAX; n];
        let mut root_path = vec![0u128; n];
        let mut tree = 0u128;
        let mut n_components = 0;
        for r in 0..n {
            if component[r] != usize::MAX {
                continue;
            }
            component[r] = n_components;
            let mut q = VecDeque::from([r]);
            while let Some(v) = q.pop_front() {
                for &e in set.incidence(v) {
                    if mask & (1u128 << e) == 0 {
                        continue;
                    }
                    let (a, b) = set.ends(e);
                    let w = if a == v { b } else { a };
                    if component[w] == usize::MAX {
                        component[w] = n_components;
                        root_path[w] = root_path[v] | (1u128 << e);
                        tree |= 1u128 << e;
                        q.push_back(w);
                    }
                }
            }
            n_components += 1;
        }
        let basis = iter_bits(mask & !tree)
            .map(|e| {
                let (a, b) = set.ends(e);
                (1u128 << e) ^ root_path[a] ^ root_path[b]
            })
            .collect();
        CycleSpace { basis, root_path, component, n_components }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Some `D` with boundary equal to the vertex mask `a`, if one exists.
    pub fn particular(&self, a: Mask) -> Option<Mask> {
        let mut parity = vec![0u8; self.n_components];
        let mut d = 0u128;
        for v in iter_bits(a) {
            parity[self.component[v]] ^= 1;
            d ^= self.root_path[v];
        }
        parity.iter().all(|&p| p == 0).then_some(d)
    }

    /// Visits `d0 xor c` for every even subgraph `c`, in Gray-code order.
    pub fn for_each_coset<F: FnMut(Mask)>(&self, d0: Mask, mut f: F) {
        let mut cur = d0;
        f(cur);
        let k = self.basis.len();
        for i in 1u64..(1u64 << k) {
            cur ^= self.basis[i.trailing_zeros() as usize];
            f(cur);
        }
    }

    /// All diagrams with boundary `a`.
    pub fn diagrams_with_boundary(&self, a: Mask) -> Vec<Mask> {
        let mut out = Vec::new();
        if let Some(d0) = self.particular(a) {
            self.for_each_coset(d0, |d| out.push(d));
        }
        out
    }

    /// `sum_{even D} t^{|D|}`.
    pub fn even_sum(&self, t: f64) -> f64 {
        let pows: Vec<f64> = (0..=128).map(|k| t.powi(k)).collect();
        let mut s = 0.0;
        self.for_each_coset(0, |d| s += pows[d.count_ones() as usize]);
        s
    }
}

const CYCLE_ROUTE_MAX_DIM: usize = 18;
const TRANSFER_MAX_HEIGHT: usize = 16;

/// Cached `log Z_HT(B')` for edge subsets `B'` of a fixed bond set, where
/// `Z_HT(B') = sum_{D in B', dD = 0} tanh(beta)^{|D|}`.
#[derive(Debug)]
pub struct ZCalc<'a> {
    set: &'a EdgeSet,
    beta: f64,
    t: f64,
    budget: Budget,
    cache: HashMap<Mask, f64>,
}

impl<'a> ZCalc<'a> {
    pub fn new(set: &'a EdgeSet, beta: f64, budget: Budget) -> Self {
        ZCalc { set, beta, t: beta.tanh(), budget, cache: HashMap::new() }
    }

    pub fn set(&self) -> &EdgeSet {
        self.set
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn log_z(&mut self, mask: Mask) -> Result<f64> {
        if let Some(&v) = self.cache.get(&mask) {
            return Ok(v);
        }
        let cs = CycleSpace::new(self.set, mask);
        let v = if cs.dim() <= CYCLE_ROUTE_MAX_DIM {
            cs.even_sum(self.t).ln()
        } else if self.set.dim() <= 2 {
            log_z_transfer(self.set, mask, self.beta)?
        } else {
            self.budget.check_pow2("even subgraphs", cs.dim())?;
            cs.even_sum(self.t).ln()
        };
        self.cache.insert(mask, v);
        Ok(v)
    }

    /// `Z_HT(B \ removed) / Z_HT(B)`.
    pub fn ratio_removed(&mut self, removed: Mask) -> Result<f64> {
        let full = self.set.full_mask();
        Ok((self.log_z(full & !removed)? - self.log_z(full)?).exp())
    }
}

/// `log Z_HT` of an edge subset of a one- or two-dimensional bond set by a
/// site-by-site transfer matrix over columns (first coordinate).
pub fn log_z_transfer(set: &EdgeSet, mask: Mask, beta: f64) -> Result<f64> {
    let d = set.dim();
    if d > 2 {
        return Err(OzError::Unsupported("transfer matrix needs dimension 1 or 2".into()));
    }
    let coord = |p: &Point, a: usize| if a < p.dim() { p.0[a] } else { 0 };
    let xs = set.vertices().iter().map(|p| coord(p, 0));
    let ys = set.vertices().iter().map(|p| coord(p, 1));
    let (x0, x1) = (xs.clone().min().unwrap(), xs.max().unwrap());
    let (y0, y1) = (ys.clone().min().unwrap(), ys.max().unwrap());
    let w = (x1 - x0 + 1) as usize;
    let h = (y1 - y0 + 1) as usize;
    if h > TRANSFER_MAX_HEIGHT {
        return Err(OzError::Unsupported(format!("transfer matrix height {h} exceeds {TRANSFER_MAX_HEIGHT}")));
    }
    let mut horiz = vec![vec![false; h]; w];
    let mut vert = vec![vec![false; h]; w];
    for e in iter_bits(mask) {
        let edge = &set.edges()[e];
        let (x, y) = ((coord(&edge.lo, 0) - x0) as usize, (coord(&edge.lo, 1) - y0) as usize);
        if edge.axis() == 0 {
            horiz[x][y] = true;
        } else {
            vert[x][y] = true;
        }
    }
    let ns = 1usize << h;
    let spin = |s: usize, y: usize| if s >> y & 1 == 1 { -1.0 } else { 1.0 };
    let (ep, em) = (beta.exp(), (-beta).exp());
    let column_weight = |x: usize, s: usize| -> f64 {
        let mut e = 0.0;
        for y in 0..h.saturating_sub(1) {
            if vert[x][y] {
                e += spin(s, y) * spin(s, y + 1);
            }
        }
        (beta * e).exp()
    };
    let mut v: Vec<f64> = (0..ns).map(|s| column_weight(0, s)).collect();
    let mut log_scale = 0.0;
    let normalize = |v: &mut Vec<f64>, log_scale: &mut f64| {
        let m = v.iter().copied().fold(0.0, f64::max);
        for x in v.iter_mut() {
            *x /= m;
        }
        *log_scale += m.ln();
    };
    normalize(&mut v, &mut log_scale);
    for x in 1..w {
        for y in 0..h {
            let bit = 1usize << y;
            let coupled = horiz[x - 1][y];
            let mut nv = vec![0.0; ns];
            for s in 0..ns {
                if s & bit != 0 {
                    continue;
                }
                let (a_up, a_dn) = (v[s], v[s | bit]);
                if coupled {
                    nv[s] = a_up * ep + a_dn * em;
                    nv[s | bit] = a_up * em + a_dn * ep;
                } else {
                    nv[s] = a_up + a_dn;
                    nv[s | bit] = a_up + a_dn;
                }
            }
            v = nv;
        }
        for (s, val) in v.iter_mut().enumerate() {
            *val *= column_weight(x, s);
        }
        normalize(&mut v, &mut log_scale);
    }
    let log_z_spin = v.iter().sum::<f64>().ln() + log_scale;
    let n_sites = (w * h) as f64;
    Ok(log_z_spin - n_sites * 2f64.ln() - mask.count_ones() as f64 * beta.cosh().ln())
}

/// `<s_A>` by exact summation over all `2^|V_B|` spin configurations.
/// Repeated sites cancel (`s_x^2 = 1`).
pub fn spin_oracle(a: &[Point], set: &EdgeSet, beta: f64, budget: &Budget) -> Result<f64> {
    let n = set.num_vertices();
    budget.check_pow2("spin configurations", n)?;
    let amask = set.vertex_mask(a)?;
    let mut nbrs = vec![Vec::new(); n];
    for e in 0..set.num_edges() {
        let (x, y) = set.ends(e);
        nbrs[x].push(y);
        nbrs[y].push(x);
    }
    // spins as a bitmask, bit set = spin -1; `diff` = number of unsatisfied bonds
    let mut s: u128 = 0;
    let mut diff: i64 = 0;
    let mut z = 0.0;
    let mut za = 0.0;
    let weight = |diff: i64| (-2.0 * beta * diff as f64).exp();
    let total = 1u128 << n;
    let mut i: u128 = 0;
    loop {
        let w = weight(diff);
        z += w;
        if (s & amask).count_ones().is_multiple_of(2) {
            za += w;
        } else {
            za -= w;
        }
        i += 1;
        if i == total {
            break;
        }
        let v = i.trailing_zeros() as usize;
        let sv = s >> v & 1;
        for &u in &nbrs[v] {
            if (s >> u & 1) == sv {
                diff += 1;
            } else {
                diff -= 1;
            }
        }
        s ^= 1u128 << v;
    }
    Ok(za / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HtCorrelation {
    pub value: f64,
    /// Diagram sum with boundary `A`.
    pub numerator: f64,
    /// Diagram sum with empty boundary, `Z_HT(B)`.
    pub z: f64,
    /// `|A|` odd: the value vanishes by spin-flip symmetry.
    pub odd: bool,
}

/// `<s_A>` as a ratio of diagram sums over all `2^|B|` edge subsets, in
/// Gray-code order with incremental boundary updates.
pub fn correlation_ht(a: &[Point], set: &EdgeSet, beta: f64, budget: &Budget) -> Result<HtCorrelation> {
    let amask = set.vertex_mask(a)?;
    let t = beta.tanh();
    if amask.count_ones() % 2 == 1 {
        return Ok(HtCorrelation { value: 0.0, numerator: 0.0, z: f64::NAN, odd: true });
    }
    let m = set.num_edges();
    budget.check_pow2("diagrams", m)?;
    let pows: Vec<f64> = (0..=m as i32).map(|k| t.powi(k)).collect();
    let toggles: Vec<Mask> = (0..m)
        .map(|e| {
            let (x, y) = set.ends(e);
            (1u128 << x) ^ (1u128 << y)
        })
        .collect();
    let mut bd: Mask = 0;
    let mut d: Mask = 0;
    let (mut num, mut z) = (0.0, 0.0);
    let total = 1u128 << m;
    let mut i: u128 = 0;
    loop {
        if bd == 0 {
            z += pows[d.count_ones() as usize];
        }
        if bd == amask {
            num += pows[d.count_ones() as usize];
        }
        i += 1;
        if i == total {
            break;
        }
        let e = i.trailing_zeros() as usize;
        d ^= 1u128 << e;
        bd ^= toggles[e];
    }
    Ok(HtCorrelation { value: num / z, numerator: num, z, odd: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn chain_correlation_closed_form() {
        let beta: f64 = 0.4;
        for k in 1..=6 {
            let set = EdgeSet::chain(k).unwrap();
            let a = [p(&[0]), p(&[k as i32])];
            let exact = beta.tanh().powi(k as i32);
            let ht = correlation_ht(&a, &set, beta, &Budget::default()).unwrap();
            let sp = spin_oracle(&a, &set, beta, &Budget::default()).unwrap();
            assert!((ht.value - exact).abs() < 1e-13);
            assert!((sp - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn square_two_corners_match() {
        let set = EdgeSet::rect(2, 2).unwrap();
        let a = [p(&[0, 0]), p(&[1, 0])];
        let ht = correlation_ht(&a, &set, 0.3, &Budget::default()).unwrap();
        let sp = spin_oracle(&a, &set, 0.3, &Budget::default()).unwrap();
        assert!((ht.value - sp).abs() < 1e-12);
    }

    #[test]
    fn trivial_correlations() {
        let set = EdgeSet::rect(2, 3).unwrap();
        assert!((spin_oracle(&[p(&[0, 1]), p(&[0, 1])], &set, 0.5, &Budget::default()).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(correlation_ht(&[], &set, 0.5, &Budget::default()).unwrap().value, 1.0);
        assert!(correlation_ht(&[p(&[0, 0])], &set, 0.5, &Budget::default()).unwrap().odd);
        let tiny = spin_oracle(&[p(&[0, 0]), p(&[1, 2])], &set, 1e-9, &Budget::default()).unwrap();
        assert!(tiny.abs() < 1e-8);
    }

    #[test]
    fn z_routes_agree() {
        let set = EdgeSet::rect(4, 3).unwrap();
        let beta: f64 = 0.37;
        let full = set.full_mask();
        let cycle = CycleSpace::new(&set, full).even_sum(beta.tanh()).ln();
        let transfer = log_z_transfer(&set, full, beta).unwrap();
        assert!((cycle - transfer).abs() < 1e-12, "{cycle} vs {transfer}");
        let ht = correlation_ht(&[], &set, beta, &Budget::default()).unwrap();
        assert!((ht.z.ln() - cycle).abs() < 1e-12);
        // with some edges removed
        let sub = full & !0b1010_0110u128;
        let cycle = CycleSpace::new(&set, sub).even_sum(beta.tanh()).ln();
        assert!((cycle - log_z_transfer(&set, sub, beta).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn diagrams_with_boundary_complete() {
        let set = EdgeSet::rect(3, 3).unwrap();
        let a = set.vertex_mask(&[p(&[0, 0]), p(&[2, 2])]).unwrap();
        let cs = CycleSpace::new(&set, set.full_mask());
        let mut got = cs.diagrams_with_boundary(a);
        got.sort();
        let mut brute: Vec<Mask> = (0..1u128 << 12).filter(|&d| set.boundary_mask(d) == a).collect();
        brute.sort();
        assert_eq!(got, brute);
    }
}
