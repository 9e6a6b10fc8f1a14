//! Exact finite-volume Ising machinery with free boundary conditions and the
//! ferromagnetic weight `exp(+beta sum_{xy in B} s_x s_y)`.
//!
//! Edge subsets of a bond set `B` are `u128` masks over the sorted edge list,
//! so every graph handled here has at most 128 edges and 128 vertices.

pub mod lines;
pub mod oddodd;
pub mod partition;

use std::collections::HashMap;

use crate::error::{OzError, Result};
use crate::lattice::{edge_rank_at, Edge, Path, Point};

pub use lines::{
    bk_check, delta_of_family, delta_of_path, extract_lines, is_admissible_family, is_admissible_path, q_weight,
    verify_representation, BkReport, Extraction, PathFamily, RepresentationReport,
};
pub use oddodd::{odd_odd_correlation, OddOddReport};
pub use partition::{correlation_ht, spin_oracle, CycleSpace, HtCorrelation, ZCalc};

pub type Mask = u128;

pub const MAX_EDGES: usize = 128;

/// Finite bond set `B` with its vertex set and ordered incidence lists.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    edges: Vec<Edge>,
    vertices: Vec<Point>,
    vindex: HashMap<Point, usize>,
    ends: Vec<(usize, usize)>,
    /// Edge indices at each vertex, in the per-site edge order.
    incidence: Vec<Vec<usize>>,
    eindex: HashMap<Edge, usize>,
}

impl EdgeSet {
    pub fn from_edges(mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort();
        edges.dedup();
        if edges.len() > MAX_EDGES {
            return Err(OzError::Unsupported(format!("{} edges exceed the {MAX_EDGES}-edge limit", edges.len())));
        }
        let mut vertices: Vec<Point> = edges.iter().flat_map(|e| [e.lo.clone(), e.hi.clone()]).collect();
        vertices.sort();
        vertices.dedup();
        if vertices.len() > 128 {
            return Err(OzError::Unsupported("more than 128 vertices".into()));
        }
        let vindex: HashMap<Point, usize> = vertices.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let ends: Vec<(usize, usize)> = edges.iter().map(|e| (vindex[&e.lo], vindex[&e.hi])).collect();
        let mut incidence = vec![Vec::new(); vertices.len()];
        for (i, &(a, b)) in ends.iter().enumerate() {
            incidence[a].push(i);
            incidence[b].push(i);
        }
        for (v, inc) in incidence.iter_mut().enumerate() {
            let x = &vertices[v];
            inc.sort_by_key(|&i| edge_rank_at(x, edges[i].other(x).unwrap()));
        }
        let eindex = edges.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        Ok(EdgeSet { edges, vertices, vindex, ends, incidence, eindex })
    }

    /// All bonds of the `w x h` block of sites `[0, w) x [0, h)` shifted by `origin`.
    pub fn rect_at(origin: &[i32; 2], w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(OzError::precondition("box sides must be positive"));
        }
        let mut edges = Vec::new();
        for x in 0..w as i32 {
            for y in 0..h as i32 {
                let p = Point(vec![origin[0] + x, origin[1] + y]);
                if x + 1 < w as i32 {
                    edges.push(Edge::new(p.clone(), Point(vec![origin[0] + x + 1, origin[1] + y]))?);
                }
                if y + 1 < h as i32 {
                    edges.push(Edge::new(p.clone(), Point(vec![origin[0] + x, origin[1] + y + 1]))?);
                }
            }
        }
        if edges.is_empty() {
            return Err(OzError::precondition("a 1x1 box has no bonds"));
        }
        Self::from_edges(edges)
    }

    /// `w x h` sites, anchored at the origin.
    pub fn rect(w: usize, h: usize) -> Result<Self> {
        Self::rect_at(&[0, 0], w, h)
    }

    /// Parses `"WxH"`.
    pub fn parse_box(spec: &str) -> Result<Self> {
        let (w, h) = parse_box_dims(spec)?;
        Self::rect(w, h)
    }

    /// One-dimensional chain on sites `0..=k`.
    pub fn chain(k: usize) -> Result<Self> {
        let edges = (0..k as i32).map(|i| Edge::new(Point(vec![i]), Point(vec![i + 1]))).collect::<Result<_>>()?;
        Self::from_edges(edges)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].dim()
    }

    pub fn full_mask(&self) -> Mask {
        if self.edges.len() == 128 {
            Mask::MAX
        } else {
            (1u128 << self.edges.len()) - 1
        }
    }

    pub fn ends(&self, e: usize) -> (usize, usize) {
        self.ends[e]
    }

    pub fn vertex_index(&self, p: &Point) -> Option<usize> {
        self.vindex.get(p).copied()
    }

    pub fn edge_index(&self, e: &Edge) -> Option<usize> {
        self.eindex.get(e).copied()
    }

    /// Edge indices at vertex `v` in the per-site edge order.
    pub fn incidence(&self, v: usize) -> &[usize] {
        &self.incidence[v]
    }

    pub fn contains_vertex(&self, p: &Point) -> bool {
        self.vindex.contains_key(p)
    }

    /// Mask of the given edges; refuses edges outside `B`.
    pub fn mask_of(&self, edges: &[Edge]) -> Result<Mask> {
        edges.iter().try_fold(0u128, |m, e| {
            self.edge_index(e)
                .map(|i| m | (1u128 << i))
                .ok_or_else(|| OzError::precondition(format!("edge {}-{} is not in B", e.lo, e.hi)))
        })
    }

    pub fn edges_of(&self, mask: Mask) -> Vec<Edge> {
        iter_bits(mask).map(|i| self.edges[i].clone()).collect()
    }

    /// Mask of vertices with odd index in the edge subset `mask`.
    pub fn boundary_mask(&self, mask: Mask) -> Mask {
        iter_bits(mask).fold(0u128, |acc, e| {
            let (a, b) = self.ends[e];
            acc ^ (1u128 << a) ^ (1u128 << b)
        })
    }

    /// Odd-index vertices of the edge subset, in site order.
    pub fn boundary_of(&self, mask: Mask) -> Vec<Point> {
        iter_bits(self.boundary_mask(mask)).map(|v| self.vertices[v].clone()).collect()
    }

    /// Vertex mask of a site set; refuses sites outside `V_B`.
    pub fn vertex_mask(&self, sites: &[Point]) -> Result<Mask> {
        sites.iter().try_fold(0u128, |m, p| {
            self.vertex_index(p)
                .map(|i| m ^ (1u128 << i))
                .ok_or_else(|| OzError::precondition(format!("site {p} is not a vertex of B")))
        })
    }

    /// Edges of a path as a mask; refuses paths leaving `B` or reusing an edge.
    pub fn path_mask(&self, path: &Path) -> Result<Mask> {
        let mut m = 0u128;
        for e in path.edges() {
            let i = self
                .edge_index(&e)
                .ok_or_else(|| OzError::precondition(format!("path edge {}-{} is not in B", e.lo, e.hi)))?;
            if m & (1u128 << i) != 0 {
                return Err(OzError::precondition("path uses an edge twice"));
            }
            m |= 1u128 << i;
        }
        Ok(m)
    }

    /// Rank of edge `e` in the incidence list of vertex `v`.
    pub fn rank_at(&self, v: usize, e: usize) -> Option<usize> {
        self.incidence[v].iter().position(|&f| f == e)
    }
}

pub fn parse_box_dims(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.trim().split(['x', 'X']).collect();
    if let [w, h] = parts.as_slice() {
        if let (Ok(w), Ok(h)) = (w.trim().parse::<usize>(), h.trim().parse::<usize>()) {
            return Ok((w, h));
        }
    }
    Err(OzError::precondition(format!("cannot parse box {spec:?}; expected WxH")))
}

/// Indices of set bits, ascending.
pub fn iter_bits(mut m: Mask) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(i)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn rect_sizes() {
        let b = EdgeSet::rect(3, 3).unwrap();
        assert_eq!((b.num_vertices(), b.num_edges()), (9, 12));
        let b = EdgeSet::rect(4, 3).unwrap();
        assert_eq!((b.num_vertices(), b.num_edges()), (12, 17));
        assert!(EdgeSet::rect(1, 1).is_err());
    }

    #[test]
    fn boundary_examples() {
        let b = EdgeSet::rect(2, 2).unwrap();
        let e = b.mask_of(&[Edge::new(p(&[0, 0]), p(&[1, 0])).unwrap()]).unwrap();
        assert_eq!(b.boundary_of(e), vec![p(&[0, 0]), p(&[1, 0])]);
        assert!(b.boundary_of(b.full_mask()).is_empty());
    }

    #[test]
    fn handshake_parity_small_diagrams() {
        let b = EdgeSet::rect(3, 3).unwrap();
        for m in 0u128..(1 << 12) {
            if m.count_ones() <= 4 {
                assert_eq!(b.boundary_of(m).len() % 2, 0);
            }
        }
    }

    #[test]
    fn incidence_follows_edge_order() {
        let b = EdgeSet::rect(3, 3).unwrap();
        let c = b.vertex_index(&p(&[1, 1])).unwrap();
        let others: Vec<Point> =
            b.incidence(c).iter().map(|&e| b.edges()[e].other(&p(&[1, 1])).unwrap().clone()).collect();
        assert_eq!(others, vec![p(&[0, 1]), p(&[2, 1]), p(&[1, 0]), p(&[1, 2])]);
    }

    #[test]
    fn parse_dims() {
        assert_eq!(parse_box_dims("4x3").unwrap(), (4, 3));
        assert!(parse_box_dims("4by3").is_err());
    }
}
