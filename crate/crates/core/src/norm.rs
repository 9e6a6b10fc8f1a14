//! Norm evaluators standing in for the inverse correlation length.
//!
//! Two families: a scaled Euclidean norm in any dimension (with a closed-form
//! cone distance) and a planar polygonal gauge built from direction samples.

use crate::error::{OzError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Norm {
    Euclidean { scale: f64 },
    Polygon(PolygonNorm),
}

impl Norm {
    pub fn euclidean(scale: f64) -> Self {
        Norm::Euclidean { scale }
    }

    /// Fixed dimension, if the norm has one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Norm::Euclidean { .. } => None,
            Norm::Polygon(_) => Some(2),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Norm::Euclidean { scale } => scale * y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Polygon(p) => p.eval(y),
        }
    }

    /// Distance, measured in this norm, from `y` to the closure of the cone
    /// `{w : (w, t) > (1 - delta) |w|}` (with `|.|` this norm).
    pub fn distance_to_cone(&self, y: &[f64], t: &[f64], delta: f64) -> f64 {
        match self {
            Norm::Euclidean { scale } => euclidean_cone_distance(*scale, y, t, delta),
            Norm::Polygon(p) => p.distance_to_cone(y, t, delta),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn euclidean_cone_distance(scale: f64, y: &[f64], t: &[f64], delta: f64) -> f64 {
    let ny = dot(y, y).sqrt();
    if ny == 0.0 {
        return 0.0;
    }
    let nt = dot(t, t).sqrt();
    let c = if nt > 0.0 { (1.0 - delta) * scale / nt } else { f64::INFINITY };
    if c >= 1.0 {
        // only the apex survives
        return scale * ny;
    }
    let par = dot(y, t) / nt;
    let perp = (ny * ny - par * par).max(0.0).sqrt();
    if par >= c * ny {
        return 0.0;
    }
    let s = (1.0 - c * c).sqrt();
    if par * c + perp * s <= 0.0 {
        scale * ny
    } else {
        scale * (perp * c - par * s)
    }
}

/// Planar gauge `y -> max_i (n_i, y) / c_i` of a convex polygon containing
/// the origin in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonNorm {
    /// Vertices of the unit ball in counter-clockwise order.
    vertices: Vec<[f64; 2]>,
    /// Outward edge normals scaled so that `(n_i, v) = 1` on edge `i`.
    facets: Vec<[f64; 2]>,
}

impl PolygonNorm {
    /// Builds the gauge whose unit ball has the given vertices.
    pub fn from_vertices(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(OzError::precondition("a polygonal norm needs at least 3 vertices"));
        }
        vertices.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
        let n = vertices.len();
        let mut facets = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let normal = [b[1] - a[1], a[0] - b[0]];
            let off = normal[0] * a[0] + normal[1] * a[1];
            if !(off > 0.0) {
                return Err(OzError::precondition("origin must lie strictly inside the polygon"));
            }
            facets.push([normal[0] / off, normal[1] / off]);
        }
        // convexity: every vertex within every facet
        for f in &facets {
            for v in &vertices {
                if f[0] * v[0] + f[1] * v[1] > 1.0 + 1e-9 {
                    return Err(OzError::precondition("polygon is not convex"));
                }
            }
        }
        Ok(PolygonNorm { vertices, facets })
    }

    /// Norm interpolating samples `xi(u_k)`: its unit ball is the convex hull
    /// of the points `u_k / xi(u_k)`.
    pub fn from_samples(samples: &[([f64; 2], f64)]) -> Result<Self> {
        let pts: Vec<[f64; 2]> = samples
            .iter()
            .map(|(u, xi)| {
                let n = (u[0] * u[0] + u[1] * u[1]).sqrt();
                [u[0] / n / xi, u[1] / n / xi]
            })
            .collect();
        Self::from_vertices(convex_hull(pts))
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn facets(&self) -> &[[f64; 2]] {
        &self.facets
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.facets.iter().map(|f| f[0] * y[0] + f[1] * y[1]).fold(0.0, f64::max)
    }

    fn cone_margin(&self, t: &[f64], delta: f64, phi: f64) -> f64 {
        let w = [phi.cos(), phi.sin()];
        w[0] * t[0] + w[1] * t[1] - (1.0 - delta) * self.eval(&w)
    }

    /// Boundary rays of the cone as unit vectors, or `None` if the cone is only the apex.
    pub fn cone_rays(&self, t: &[f64], delta: f64) -> Option<([f64; 2], [f64; 2])> {
        const SCAN: usize = 3600;
        let step = std::f64::consts::TAU / SCAN as f64;
        let (mut best, mut best_phi) = (f64::NEG_INFINITY, 0.0);
        for i in 0..SCAN {
            let phi = i as f64 * step;
            let m = self.cone_margin(t, delta, phi);
            if m > best {
                best = m;
                best_phi = phi;
            }
        }
        if best <= 0.0 {
            return None;
        }
        let find = |sign: f64| {
            let mut inside = best_phi;
            let mut k = 1;
            let mut outside = loop {
                let phi = best_phi + sign * k as f64 * step;
                if self.cone_margin(t, delta, phi) <= 0.0 || k > SCAN {
                    break phi;
                }
                inside = phi;
                k += 1;
            };
            for _ in 0..80 {
                let mid = 0.5 * (inside + outside);
                if self.cone_margin(t, delta, mid) > 0.0 {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            [inside.cos(), inside.sin()]
        };
        Some((find(-1.0), find(1.0)))
    }

    pub fn distance_to_cone(&self, y: &[f64], t: &[f64], delta: f64) -> f64 {
        let ny = self.eval(y);
        if ny == 0.0 {
            return 0.0;
        }
        if dot(y, t) >= (1.0 - delta) * ny {
            return 0.0;
        }
        let Some((r1, r2)) = self.cone_rays(t, delta) else {
            return ny;
        };
        [r1, r2].iter().map(|r| self.ray_distance(y, r)).fold(ny, f64::min)
    }

    /// `min_{s >= 0} xi(y - s r)` by golden-section search (convex in `s`).
    fn ray_distance(&self, y: &[f64], r: &[f64; 2]) -> f64 {
        let f = |s: f64| self.eval(&[y[0] - s * r[0], y[1] - s * r[1]]);
        let mut lo = 0.0;
        let mut hi = 2.0 * self.eval(y) / self.eval(r);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - g * (hi - lo);
        let mut b = lo + g * (hi - lo);
        let (mut fa, mut fb) = (f(a), f(b));
        for _ in 0..200 {
            if fa <= fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - g * (hi - lo);
                fa = f(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + g * (hi - lo);
                fb = f(b);
            }
            if hi - lo < 1e-14 * (1.0 + hi) {
                break;
            }
        }
        f(0.5 * (lo + hi)).min(f(0.0))
    }
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 1e-15 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}
