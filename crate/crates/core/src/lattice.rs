//! Lattice geometry shared by every model: sites, nearest-neighbour paths,
//! the fixed site and edge orders, and forward cones.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OzError, Result};
use crate::norm::Norm;

/// A site of `Z^d`. Ordered lexicographically by coordinates, which is the
/// site order used throughout (line extraction picks "first" sites by it).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<i32>);

impl Point {
    pub fn new(coords: Vec<i32>) -> Self {
        Point(coords)
    }

    pub fn origin(d: usize) -> Self {
        Point(vec![0; d])
    }

    pub fn unit(d: usize, axis: usize, sign: i32) -> Self {
        let mut c = vec![0; d];
        c[axis] = sign;
        Point(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Componentwise floor of a real vector.
    pub fn floor_of(v: &[f64]) -> Self {
        Point(v.iter().map(|x| x.floor() as i32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(&a, b)| a as f64 * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Point {
        Point(self.0.iter().map(|a| -a).collect())
    }

    pub fn is_neighbor(&self, other: &Point) -> bool {
        self.dim() == other.dim() && self.sub(other).l1() == 1
    }

    /// Parses `"1,0"`, `"(1,0)"` or `"1 0"`.
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let coords: std::result::Result<Vec<i32>, _> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<i32>())
            .collect();
        match coords {
            Ok(c) if !c.is_empty() => Ok(Point(c)),
            _ => Err(OzError::precondition(format!("cannot parse lattice point {s:?}"))),
        }
    }

    /// Parses a `;`-separated list of points such as `"(0,0);(1,1)"`.
    pub fn parse_list(s: &str) -> Result<Vec<Point>> {
        s.split(';').filter(|t| !t.trim().is_empty()).map(Point::parse).collect()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Nearest-neighbour bond, stored with its endpoints in site order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub lo: Point,
    pub hi: Point,
}

impl Edge {
    pub fn new(a: Point, b: Point) -> Result<Self> {
        if !a.is_neighbor(&b) {
            return Err(OzError::precondition(format!("{a} and {b} are not nearest neighbours")));
        }
        Ok(if a < b { Edge { lo: a, hi: b } } else { Edge { lo: b, hi: a } })
    }

    pub fn contains(&self, x: &Point) -> bool {
        &self.lo == x || &self.hi == x
    }

    pub fn other(&self, x: &Point) -> Option<&Point> {
        if &self.lo == x {
            Some(&self.hi)
        } else if &self.hi == x {
            Some(&self.lo)
        } else {
            None
        }
    }

    pub fn axis(&self) -> usize {
        self.lo.0.iter().zip(&self.hi.0).position(|(a, b)| a != b).unwrap_or(0)
    }
}

/// Rank of the incident edge `x -- y` in the per-site edge order: by axis,
/// negative direction before positive.
pub fn edge_rank_at(x: &Point, y: &Point) -> usize {
    let axis = x.0.iter().zip(&y.0).position(|(a, b)| a != b).unwrap_or(0);
    let positive = y.0[axis] > x.0[axis];
    2 * axis + usize::from(positive)
}

/// Compare two edges incident to `x` in the per-site edge order.
pub fn edge_order_at(x: &Point, e: &Edge, f: &Edge) -> Ordering {
    let oe = e.other(x).expect("edge not incident");
    let of = f.other(x).expect("edge not incident");
    edge_rank_at(x, oe).cmp(&edge_rank_at(x, of))
}

/// Nonempty nearest-neighbour path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Path {
    sites: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Path {
    type Error = OzError;
    fn try_from(sites: Vec<Point>) -> Result<Self> {
        Path::new(sites)
    }
}

impl From<Path> for Vec<Point> {
    fn from(p: Path) -> Self {
        p.sites
    }
}

impl Path {
    pub fn new(sites: Vec<Point>) -> Result<Self> {
        let Some(first) = sites.first() else {
            return Err(OzError::precondition("a path needs at least one site"));
        };
        let d = first.dim();
        for w in sites.windows(2) {
            if w[1].dim() != d || !w[0].is_neighbor(&w[1]) {
                return Err(OzError::precondition(format!("{} -> {} is not a unit step", w[0], w[1])));
            }
        }
        Ok(Path { sites })
    }

    pub fn single(site: Point) -> Self {
        Path { sites: vec![site] }
    }

    /// Straight segment from `start` along `axis` with `steps` unit steps (sign gives direction).
    pub fn straight(start: Point, axis: usize, steps: i32) -> Self {
        let dir = steps.signum();
        let mut sites = vec![start.clone()];
        let mut cur = start;
        for _ in 0..steps.abs() {
            cur.0[axis] += dir;
            sites.push(cur.clone());
        }
        Path { sites }
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn dim(&self) -> usize {
        self.sites[0].dim()
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.sites.len() == 1
    }

    pub fn start(&self) -> &Point {
        &self.sites[0]
    }

    pub fn end(&self) -> &Point {
        self.sites.last().unwrap()
    }

    pub fn displacement(&self) -> Point {
        self.end().sub(self.start())
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.sites.len());
        self.sites.iter().all(|s| seen.insert(s))
    }

    pub fn translate(&self, by: &Point) -> Path {
        Path { sites: self.sites.iter().map(|s| s.add(by)).collect() }
    }

    pub fn reversed(&self) -> Path {
        let mut sites = self.sites.clone();
        sites.reverse();
        Path { sites }
    }

    /// Edges in traversal order.
    pub fn edges(&self) -> Vec<Edge> {
        self.sites
            .windows(2)
            .map(|w| Edge::new(w[0].clone(), w[1].clone()).expect("validated path"))
            .collect()
    }

    /// Concatenation, with `other` translated so that it starts where `self` ends.
    pub fn concat(&self, other: &Path) -> Path {
        let shift = self.end().sub(other.start());
        let mut sites = self.sites.clone();
        sites.extend(other.sites.iter().skip(1).map(|s| s.add(&shift)));
        Path { sites }
    }

    /// Sub-path between site indices `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Path {
        Path { sites: self.sites[from..=to].to_vec() }
    }
}

/// Forward cone `{y : (y, t) > (1 - delta) xi(y)}` together with the scale `K`
/// used for the `K U + C` confinement sets.
#[derive(Debug, Clone)]
pub struct ConeSpec {
    pub t_hat: Vec<f64>,
    pub delta: f64,
    pub k: f64,
    pub xi: Norm,
}

impl ConeSpec {
    pub fn new(t_hat: Vec<f64>, delta: f64, k: f64, xi: Norm) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(OzError::precondition(format!("cone aperture delta={delta} must lie in (0,1)")));
        }
        if !(k >= 1.0) {
            return Err(OzError::precondition(format!("scale K={k} must be >= 1")));
        }
        if let Some(d) = xi.dim() {
            if d != t_hat.len() {
                return Err(OzError::precondition("norm and dual point have different dimensions"));
            }
        }
        Ok(ConeSpec { t_hat, delta, k, xi })
    }

    /// Membership in the open cone; the apex counts as inside.
    pub fn contains(&self, y: &[f64]) -> bool {
        if y.iter().all(|&c| c == 0.0) {
            return true;
        }
        let lhs: f64 = y.iter().zip(&self.t_hat).map(|(a, b)| a * b).sum();
        lhs > (1.0 - self.delta) * self.xi.eval(y)
    }

    /// `xi`-distance from `y` to the closed cone.
    pub fn distance(&self, y: &[f64]) -> f64 {
        self.xi.distance_to_cone(y, &self.t_hat, self.delta)
    }

    /// Whether `y` lies in `r U + C` (closed ball plus closed cone).
    pub fn in_fattened(&self, y: &[f64], r: f64) -> bool {
        self.distance(y) <= r * (1.0 + 1e-12) + 1e-12
    }
}

pub fn in_cone(y: &Point, cone: &ConeSpec) -> bool {
    cone.contains(&y.to_f64())
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

    #[test]
    fn concat_translates_second_path() {
        let a = path(&[[0, 0], [1, 0]]);
        let b = path(&[[0, 0], [0, 1]]);
        assert_eq!(a.concat(&b), path(&[[0, 0], [1, 0], [1, 1]]));
        assert_eq!(a.concat(&Path::single(p(&[5, 5]))), a);
    }

    #[test]
    fn self_avoidance() {
        assert!(path(&[[0, 0], [1, 0], [1, 1]]).is_self_avoiding());
        assert!(!path(&[[0, 0], [1, 0], [0, 0]]).is_self_avoiding());
    }

    #[test]
    fn displacement_basic() {
        assert_eq!(path(&[[0, 0], [1, 0], [1, 1]]).displacement(), p(&[1, 1]));
        assert_eq!(Path::single(p(&[3, 4])).displacement(), p(&[0, 0]));
    }

    #[test]
    fn rejects_non_unit_steps_and_empty() {
        assert!(Path::new(vec![]).is_err());
        assert!(Path::new(vec![p(&[0, 0]), p(&[1, 1])]).is_err());
    }

    #[test]
    fn three_step_self_avoiding_fraction() {
        // independent DFS over all 4^3 step sequences
        let steps = [[1, 0], [-1, 0], [0, 1], [0, -1]];
        let mut sa = 0;
        let mut total = 0;
        for a in steps {
            for b in steps {
                for c in steps {
                    let mut sites = vec![[0, 0]];
                    for s in [a, b, c] {
                        let l = *sites.last().unwrap();
                        sites.push([l[0] + s[0], l[1] + s[1]]);
                    }
                    total += 1;
                    if path(&sites).is_self_avoiding() {
                        sa += 1;
                    }
                }
            }
        }
        assert_eq!((sa, total), (36, 64));
    }

    #[test]
    fn edge_order_axis_then_sign() {
        let x = p(&[0, 0]);
        let ranks: Vec<usize> =
            [[-1, 0], [1, 0], [0, -1], [0, 1]].iter().map(|y| edge_rank_at(&x, &p(y))).collect();
        assert_eq!(ranks, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cone_membership() {
        let cone = ConeSpec::new(vec![1.0, 0.0], 0.5, 1.0, Norm::euclidean(1.0)).unwrap();
        assert!(in_cone(&p(&[1, 0]), &cone));
        assert!(!in_cone(&p(&[-1, 0]), &cone));
        assert!(in_cone(&p(&[0, 0]), &cone));
        // cos(angle) > 1/2  <=>  angle < 60 degrees
        assert!(in_cone(&p(&[2, 3]), &cone)); // 56.3 degrees
        assert!(!in_cone(&p(&[1, 2]), &cone)); // 63.4 degrees
        assert!(ConeSpec::new(vec![1.0, 0.0], 1.0, 1.0, Norm::euclidean(1.0)).is_err());
        assert!(ConeSpec::new(vec![1.0, 0.0], 0.5, 0.5, Norm::euclidean(1.0)).is_err());
    }

    #[test]
    fn parse_points() {
        assert_eq!(Point::parse("(1,-2)").unwrap(), p(&[1, -2]));
        assert_eq!(Point::parse("3").unwrap(), p(&[3]));
        assert_eq!(Point::parse_list("(0,0);(1,1)").unwrap(), vec![p(&[0, 0]), p(&[1, 1])]);
        assert!(Point::parse("a,b").is_err());
    }
}
