//! Random-line representation: extraction of edge-disjoint lines from a
//! high-temperature diagram, blocked-edge sets, admissibility, line weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::partition::{correlation_ht, spin_oracle, CycleSpace, ZCalc};
use super::{EdgeSet, Mask};
use crate::budget::Budget;
use crate::error::{OzError, Result};
use crate::lattice::{Path, Point};

/// Ordered family of lines `gamma_1, ..., gamma_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathFamily {
    pub paths: Vec<Path>,
}

impl PathFamily {
    pub fn empty() -> Self {
        PathFamily { paths: Vec::new() }
    }

    pub fn total_len(&self) -> usize {
        self.paths.iter().map(Path::len).sum()
    }

    /// Endpoints `y_i` strictly decreasing in site order.
    pub fn has_decreasing_ends(&self) -> bool {
        self.paths.windows(2).all(|w| w[0].end() > w[1].end())
    }

    /// Two lines share an endpoint (possible only for relaxed families).
    pub fn shares_endpoints(&self) -> bool {
        let mut ends: Vec<&Point> = self.paths.iter().flat_map(|p| [p.start(), p.end()]).collect();
        let n = ends.len();
        ends.sort();
        ends.dedup();
        ends.len() < n
    }
}

/// Output of the line extraction for one diagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub family: PathFamily,
    /// Blocked edges accumulated during the construction.
    pub delta: Mask,
    /// Union of the line edges.
    pub lines: Mask,
}

/// Extracts `|A|/2` lines from a diagram `D` with `dD = A`.
///
/// Lines are grown from the smallest remaining site of `A`, always through
/// the first unblocked edge of `D` in the per-site order, blocking every edge
/// at the current site up to the one used. The `k`-th constructed line
/// becomes `gamma_{|A|/2+1-k}`, traversed backwards.
pub fn extract_lines(set: &EdgeSet, d: Mask, a: &[Point]) -> Result<Extraction> {
    let amask = set.vertex_mask(a)?;
    if set.boundary_mask(d) != amask {
        return Err(OzError::precondition("the diagram's boundary differs from A"));
    }
    let mut remaining = amask;
    let mut delta: Mask = 0;
    let mut lines: Mask = 0;
    let mut built: Vec<Vec<usize>> = Vec::new();
    while remaining != 0 {
        let z0 = remaining.trailing_zeros() as usize;
        remaining &= !(1u128 << z0);
        let mut seq = vec![z0];
        loop {
            let zj = *seq.last().unwrap();
            let inc = set.incidence(zj);
            let Some(pos) = inc.iter().position(|&e| delta & (1u128 << e) == 0 && d & (1u128 << e) != 0) else {
                return Err(OzError::violation(format!(
                    "line extraction stalled at {} (diagram {d:#x})",
                    set.vertices()[zj]
                )));
            };
            let e = inc[pos];
            for &f in &inc[..=pos] {
                delta |= 1u128 << f;
            }
            lines |= 1u128 << e;
            let (x, y) = set.ends(e);
            let next = if x == zj { y } else { x };
            seq.push(next);
            if remaining & (1u128 << next) != 0 {
                remaining &= !(1u128 << next);
                break;
            }
        }
        built.push(seq);
    }
    let paths = built
        .iter()
        .rev()
        .map(|seq| Path::new(seq.iter().rev().map(|&v| set.vertices()[v].clone()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Extraction { family: PathFamily { paths }, delta, lines })
}

/// Per-site blocked sets `D_l = {e in B(x_l) : e <= (x_{l-1}, x_l)}` for `l >= 1`.
fn blocked_steps(set: &EdgeSet, path: &Path) -> Result<Vec<Mask>> {
    let sites = path.sites();
    let mut out = Vec::with_capacity(sites.len().saturating_sub(1));
    for l in 1..sites.len() {
        let v = set
            .vertex_index(&sites[l])
            .ok_or_else(|| OzError::precondition(format!("site {} is not in B", sites[l])))?;
        let e = crate::lattice::Edge::new(sites[l - 1].clone(), sites[l].clone())?;
        let ei = set
            .edge_index(&e)
            .ok_or_else(|| OzError::precondition(format!("edge {}-{} is not in B", e.lo, e.hi)))?;
        let rank = set.rank_at(v, ei).expect("incident edge");
        out.push(set.incidence(v)[..=rank].iter().fold(0u128, |m, &f| m | (1u128 << f)));
    }
    Ok(out)
}

/// `Delta(gamma)` for a single path.
pub fn delta_of_path(set: &EdgeSet, path: &Path) -> Result<Mask> {
    Ok(blocked_steps(set, path)?.into_iter().fold(0, |a, b| a | b))
}

pub fn delta_of_family(set: &EdgeSet, family: &PathFamily) -> Result<Mask> {
    family.paths.iter().try_fold(0u128, |m, p| Ok(m | delta_of_path(set, p)?))
}

/// A path never runs into edges blocked by its own later part.
pub fn is_admissible_path(set: &EdgeSet, path: &Path) -> bool {
    let Ok(_) = set.path_mask(path) else {
        return false;
    };
    let Ok(steps) = blocked_steps(set, path) else {
        return false;
    };
    let edges: Vec<Mask> = path.edges().iter().map(|e| 1u128 << set.edge_index(e).unwrap()).collect();
    let m = edges.len();
    // suffix[c] = union of D_l for l > c (site indices), i.e. steps[c..]
    let mut suffix = vec![0u128; m + 1];
    for l in (0..m).rev() {
        suffix[l] = suffix[l + 1] | steps[l];
    }
    let mut prefix = 0u128;
    for c in 1..m {
        prefix |= edges[c - 1];
        if prefix & suffix[c] != 0 {
            return false;
        }
    }
    true
}

/// Admissible lines, pairwise edge-disjoint, with earlier lines avoiding the
/// blocked edges of all later ones.
pub fn is_admissible_family(set: &EdgeSet, family: &PathFamily) -> bool {
    let mut masks = Vec::new();
    let mut deltas = Vec::new();
    for p in &family.paths {
        if !is_admissible_path(set, p) {
            return false;
        }
        masks.push(set.path_mask(p).unwrap());
        deltas.push(delta_of_path(set, p).unwrap());
    }
    let mut union = 0u128;
    for &m in &masks {
        if union & m != 0 {
            return false;
        }
        union |= m;
    }
    let n = masks.len();
    let mut later = 0u128;
    for k in (1..n).rev() {
        later |= deltas[k];
        let earlier = masks[..k].iter().fold(0u128, |a, b| a | b);
        if earlier & later != 0 {
            return false;
        }
    }
    true
}

/// `q_B(gamma) = tanh(beta)^{sum |gamma_i|} Z(B \ Delta) / Z(B)`.
pub fn q_weight(family: &PathFamily, zc: &mut ZCalc<'_>) -> Result<f64> {
    let set = zc.set();
    if !is_admissible_family(set, family) {
        return Err(OzError::precondition("family is not admissible in B"));
    }
    let delta = delta_of_family(set, family)?;
    let w = zc.t().powi(family.total_len() as i32);
    Ok(w * zc.ratio_removed(delta)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRecord {
    pub family: PathFamily,
    pub q: f64,
    /// Number of diagrams extracted to this family.
    pub fiber: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport {
    pub a: Vec<Point>,
    pub beta: f64,
    pub n_edges: usize,
    pub n_diagrams: usize,
    pub families: Vec<FamilyRecord>,
    pub sum_q: f64,
    pub ht_value: f64,
    pub spin_value: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

/// Every diagram with boundary `A`, extracted and grouped by family.
pub fn extract_all(set: &EdgeSet, a: &[Point], budget: &Budget) -> Result<(Vec<Mask>, BTreeMap<PathFamily, (Extraction, Vec<Mask>)>)> {
    let amask = set.vertex_mask(a)?;
    let cs = CycleSpace::new(set, set.full_mask());
    budget.check_pow2("diagrams with prescribed boundary", cs.dim())?;
    let diagrams = cs.diagrams_with_boundary(amask);
    let mut groups: BTreeMap<PathFamily, (Extraction, Vec<Mask>)> = BTreeMap::new();
    let sorted: Vec<Point> = {
        let mut s: Vec<Point> = super::iter_bits(amask).map(|v| set.vertices()[v].clone()).collect();
        s.sort();
        s
    };
    for &d in &diagrams {
        let ex = extract_lines(set, d, &sorted)?;
        groups.entry(ex.family.clone()).or_insert_with(|| (ex.clone(), Vec::new())).1.push(d);
    }
    Ok((diagrams, groups))
}

/// Checks `<s_A>_B = sum_{gamma ~ (A,B)} q_B(gamma)` against both the diagram
/// sum and the spin sum, together with the fiber characterization
/// `{D : extract(D) = gamma} = {D : dD = A, D n Delta(gamma) = U gamma_i}`.
pub fn verify_representation(a: &[Point], set: &EdgeSet, beta: f64, budget: &Budget) -> Result<RepresentationReport> {
    const TOL: f64 = 1e-12;
    let (diagrams, groups) = extract_all(set, a, budget)?;
    let mut zc = ZCalc::new(set, beta, *budget);
    let t = beta.tanh();
    let mut families = Vec::with_capacity(groups.len());
    let mut sum_q = 0.0;
    for (fam, (ex, fiber)) in &groups {
        if !fam.has_decreasing_ends() {
            return Err(OzError::violation("extracted family violates the endpoint order"));
        }
        if !is_admissible_family(set, fam) {
            return Err(OzError::violation("extracted family is not admissible"));
        }
        if delta_of_family(set, fam)? != ex.delta {
            return Err(OzError::violation("blocked set recomputed from the lines differs from the extraction"));
        }
        let q = q_weight(fam, &mut zc)?;
        // fiber weight = t^{|gamma|} Z(B \ Delta)
        let fiber_weight: f64 = fiber.iter().map(|d| t.powi(d.count_ones() as i32)).sum();
        let expected = t.powi(fam.total_len() as i32) * zc.log_z(set.full_mask() & !ex.delta)?.exp();
        if (fiber_weight - expected).abs() > TOL * expected.max(1.0) {
            return Err(OzError::violation(format!(
                "fiber weight {fiber_weight} differs from t^|gamma| Z(B\\Delta) = {expected}"
            )));
        }
        for &d in &diagrams {
            let characterized = d & ex.delta == ex.lines;
            let extracted = fiber.contains(&d);
            if characterized != extracted {
                return Err(OzError::violation(format!("fiber characterization fails for diagram {d:#x}")));
            }
            if extracted && set.boundary_mask(d & !ex.delta) != 0 {
                return Err(OzError::violation(format!("D \\ Delta has nonempty boundary for diagram {d:#x}")));
            }
        }
        sum_q += q;
        families.push(FamilyRecord { family: fam.clone(), q, fiber: fiber.len() });
    }
    let ht = correlation_ht(a, set, beta, budget)?;
    let spin = spin_oracle(a, set, beta, budget)?;
    let err = (sum_q - ht.value).abs().max((sum_q - spin).abs());
    if err > TOL {
        return Err(OzError::violation(format!(
            "sum of line weights {sum_q} vs diagram sum {} and spin sum {spin}",
            ht.value
        )));
    }
    Ok(RepresentationReport {
        a: a.to_vec(),
        beta,
        n_edges: set.num_edges(),
        n_diagrams: diagrams.len(),
        families,
        sum_q,
        ht_value: ht.value,
        spin_value: spin,
        max_abs_error: err,
        tolerance: TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BkReport {
    pub lhs: f64,
    pub rhs: f64,
    pub q_family: f64,
    /// `sum_{gamma_0} q_B(gamma_0)`, equal to `<s_x s_y>_B`.
    pub sum_q0: f64,
    pub n_paths_avoiding: usize,
    pub holds: bool,
}

/// Lines joining `x` and `y` in the bond set `allowed`, from the larger to
/// the smaller endpoint.
fn connecting_lines(set: &EdgeSet, allowed: Mask, x: &Point, y: &Point) -> Result<Vec<Extraction>> {
    let amask = set.vertex_mask(&[x.clone(), y.clone()])?;
    let cs = CycleSpace::new(set, allowed);
    let mut groups: BTreeMap<PathFamily, Extraction> = BTreeMap::new();
    let ends = if x < y { [x.clone(), y.clone()] } else { [y.clone(), x.clone()] };
    for d in cs.diagrams_with_boundary(amask) {
        let ex = extract_lines(set, d, &ends)?;
        groups.entry(ex.family.clone()).or_insert(ex);
    }
    Ok(groups.into_values().collect())
}

/// Compares `sum_{gamma_0 : x - y, gamma_0 n Delta(gamma) = 0} q(gamma_0, gamma)`
/// with `q(gamma) sum_{gamma_0 : x - y} q(gamma_0)`.
pub fn bk_check(x: &Point, y: &Point, family: &PathFamily, zc: &mut ZCalc<'_>) -> Result<BkReport> {
    if x == y {
        return Err(OzError::precondition("x and y must differ"));
    }
    let set = zc.set().clone();
    if !is_admissible_family(&set, family) {
        return Err(OzError::precondition("family is not admissible in B"));
    }
    let delta_f = delta_of_family(&set, family)?;
    let q_family = q_weight(family, zc)?;
    let full = set.full_mask();
    let t = zc.t();
    let mut lhs = 0.0;
    let avoiding = connecting_lines(&set, full & !delta_f, x, y)?;
    for ex in &avoiding {
        let mut joint = vec![ex.family.paths[0].clone()];
        joint.extend(family.paths.iter().cloned());
        let joint = PathFamily { paths: joint };
        if !is_admissible_family(&set, &joint) {
            return Err(OzError::violation("joint family with an avoiding line is not admissible"));
        }
        let len = joint.total_len() as i32;
        lhs += t.powi(len) * zc.ratio_removed(ex.delta | delta_f)?;
    }
    let mut sum_q0 = 0.0;
    for ex in connecting_lines(&set, full, x, y)? {
        sum_q0 += t.powi(ex.family.total_len() as i32) * zc.ratio_removed(ex.delta)?;
    }
    let rhs = q_family * sum_q0;
    Ok(BkReport {
        lhs,
        rhs,
        q_family,
        sum_q0,
        n_paths_avoiding: avoiding.len(),
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Edge;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn straight_segment_is_its_own_line() {
        let set = EdgeSet::chain(4).unwrap();
        let ex = extract_lines(&set, set.full_mask(), &[p(&[0]), p(&[4])]).unwrap();
        assert_eq!(ex.family.paths.len(), 1);
        assert_eq!(ex.family.paths[0], Path::straight(p(&[4]), 0, -4));
    }

    #[test]
    fn segment_plus_square() {
        let set = EdgeSet::rect(4, 3).unwrap();
        let seg: Vec<Edge> = (0..3).map(|i| Edge::new(p(&[i, 0]), p(&[i + 1, 0])).unwrap()).collect();
        let sq = vec![
            Edge::new(p(&[1, 1]), p(&[2, 1])).unwrap(),
            Edge::new(p(&[2, 1]), p(&[2, 2])).unwrap(),
            Edge::new(p(&[1, 2]), p(&[2, 2])).unwrap(),
            Edge::new(p(&[1, 1]), p(&[1, 2])).unwrap(),
        ];
        let d = set.mask_of(&seg).unwrap() | set.mask_of(&sq).unwrap();
        let ex = extract_lines(&set, d, &[p(&[0, 0]), p(&[3, 0])]).unwrap();
        assert_eq!(ex.family.paths, vec![Path::straight(p(&[3, 0]), 0, -3)]);
        assert_eq!(set.boundary_mask(d & !ex.delta), 0);
        assert_eq!(ex.lines & set.mask_of(&sq).unwrap(), 0);
    }

    #[test]
    fn extraction_is_deterministic_and_rejects_wrong_boundary() {
        let set = EdgeSet::rect(3, 3).unwrap();
        let a = [p(&[0, 0]), p(&[2, 2])];
        let (diagrams, _) = extract_all(&set, &a, &Budget::default()).unwrap();
        for &d in &diagrams {
            assert_eq!(extract_lines(&set, d, &a).unwrap(), extract_lines(&set, d, &a).unwrap());
        }
        assert!(extract_lines(&set, 0, &a).is_err());
    }

    #[test]
    fn four_sites_two_lines_decreasing_ends() {
        let set = EdgeSet::rect(3, 3).unwrap();
        let a = [p(&[0, 0]), p(&[0, 2]), p(&[2, 0]), p(&[2, 2])];
        let (_, groups) = extract_all(&set, &a, &Budget::default()).unwrap();
        for fam in groups.keys() {
            assert_eq!(fam.paths.len(), 2);
            assert!(fam.has_decreasing_ends());
        }
    }

    #[test]
    fn chain_weight_and_empty_family() {
        let set = EdgeSet::chain(5).unwrap();
        let beta: f64 = 0.6;
        let mut zc = ZCalc::new(&set, beta, Budget::default());
        let fam = PathFamily { paths: vec![Path::straight(p(&[5]), 0, -5)] };
        assert!((q_weight(&fam, &mut zc).unwrap() - beta.tanh().powi(5)).abs() < 1e-14);
        assert_eq!(q_weight(&PathFamily::empty(), &mut zc).unwrap(), 1.0);
    }

    #[test]
    fn representation_on_small_boxes() {
        let set = EdgeSet::rect(2, 3).unwrap();
        let r = verify_representation(&[p(&[0, 0]), p(&[1, 2])], &set, 0.4, &Budget::default()).unwrap();
        assert!(r.max_abs_error < 1e-12);
        let r = verify_representation(&[], &set, 0.4, &Budget::default()).unwrap();
        assert!((r.sum_q - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bk_blocked_chain_gives_zero() {
        let set = EdgeSet::chain(4).unwrap();
        let mut zc = ZCalc::new(&set, 0.5, Budget::default());
        // a line over the edge 1-2 blocks the only route from 0 to 4
        let fam = PathFamily { paths: vec![Path::new(vec![p(&[2]), p(&[1])]).unwrap()] };
        let r = bk_check(&p(&[0]), &p(&[4]), &fam, &mut zc).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds && r.rhs > 0.0);
        let r = bk_check(&p(&[0]), &p(&[4]), &PathFamily::empty(), &mut zc).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-15);
    }
}
