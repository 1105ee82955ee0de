//! Triangulations of convex polygons: fan construction, uniform red
//! refinement, and point location.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use std::collections::HashMap;

/// Geometric tolerance for O(1)-scaled domains.
pub const GEOM_TOL: f64 = 1e-12;

/// A strictly convex polygon with counterclockwise vertices.
#[derive(Debug, Clone)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if (vertices[i] - vertices[j]).norm() <= GEOM_TOL {
                    return Err(Error::InvalidPolygon(format!(
                        "repeated vertex at index {j}"
                    )));
                }
            }
        }
        // Strict convexity of the boundary chain; collinear triples rejected.
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) <= GEOM_TOL {
                return Err(Error::InvalidPolygon(format!(
                    "vertices {}..{} are not strictly convex (ccw order required)",
                    i,
                    (i + 2) % n
                )));
            }
        }
        Ok(ConvexPolygon { vertices })
    }

    pub fn unit_square() -> Self {
        ConvexPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .expect("unit square is convex")
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            s += self.vertices[i].cross(self.vertices[(i + 1) % n]);
        }
        0.5 * s
    }

    pub fn centroid(&self) -> Vec2 {
        // Area-weighted centroid of the polygon.
        let n = self.vertices.len();
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            a += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Vec2::new(cx / (3.0 * a), cy / (3.0 * a))
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, &p) in self.vertices.iter().enumerate() {
            for &q in &self.vertices[i + 1..] {
                d = d.max((p - q).norm());
            }
        }
        d
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for &v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    pub fn contains(&self, x: Vec2, tol: f64) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (b - a).cross(x - a) < -tol {
                return false;
            }
        }
        true
    }
}

/// Conforming triangulation with boundary flags and mesh-size data.
///
/// Immutable after construction; refinement returns a new mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    /// Counterclockwise vertex-index triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    /// Max element diameter.
    pub h: f64,
    /// Min element diameter.
    pub h_min: f64,
}

impl Mesh {
    fn from_parts(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        boundary_vertex: Vec<bool>,
    ) -> Result<Self> {
        let mut h: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        for t in &triangles {
            let [a, b, c] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            if (b - a).cross(c - a) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t:?} has non-positive signed area"
                )));
            }
            let d = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            h = h.max(d);
            h_min = h_min.min(d);
        }
        Ok(Mesh {
            vertices,
            triangles,
            boundary_vertex,
            h,
            h_min,
        })
    }

    /// Fan triangulation of a convex polygon from its centroid, refined
    /// uniformly until `h <= target_h`.
    pub fn triangulate(polygon: &ConvexPolygon, target_h: f64) -> Result<Mesh> {
        if !(target_h > 0.0) {
            return Err(Error::Parameter(format!(
                "target_h must be positive, got {target_h}"
            )));
        }
        let n = polygon.vertices().len();
        let mut vertices = polygon.vertices().to_vec();
        let center_idx = vertices.len();
        vertices.push(polygon.centroid());
        let triangles: Vec<[usize; 3]> =
            (0..n).map(|i| [i, (i + 1) % n, center_idx]).collect();
        let mut boundary = vec![true; n];
        boundary.push(false);
        let mut mesh = Mesh::from_parts(vertices, triangles, boundary)?;
        while mesh.h > target_h {
            mesh = mesh.refine_uniform();
        }
        Ok(mesh)
    }

    /// Structured mesh of the unit square with grid spacing `1/n`, each cell
    /// split along the (lower-left, upper-right) diagonal into two right
    /// triangles.
    pub fn structured_unit_square(n: usize) -> Mesh {
        assert!(n >= 1);
        let step = 1.0 / n as f64;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Vec2::new(i as f64 * step, j as f64 * step));
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        Mesh::from_parts(vertices, triangles, boundary).expect("structured mesh is valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * (b - a).cross(c - a)
    }

    /// Quasiuniformity witness h / h_min.
    pub fn quasiuniformity(&self) -> f64 {
        self.h / self.h_min
    }

    /// Edges paired with the number of adjacent triangles (1 = boundary edge).
    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Red refinement: every triangle split into 4 congruent children via
    /// edge midpoints. Halves h exactly and preserves conformity.
    pub fn refine_uniform(&self) -> Mesh {
        let edge_counts = self.edge_counts();
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary_vertex.clone();
        let mut midpoint_of: HashMap<(usize, usize), usize> = HashMap::new();
        // Deterministic midpoint numbering: iterate triangles in order.
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                midpoint_of.entry(key).or_insert_with(|| {
                    let idx = vertices.len();
                    vertices.push(self.vertices[a].midpoint(self.vertices[b]));
                    boundary.push(edge_counts[&key] == 1);
                    idx
                });
            }
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let [a, b, c] = *t;
            let key = |u: usize, v: usize| (u.min(v), u.max(v));
            let mab = midpoint_of[&key(a, b)];
            let mbc = midpoint_of[&key(b, c)];
            let mca = midpoint_of[&key(c, a)];
            triangles.push([a, mab, mca]);
            triangles.push([b, mbc, mab]);
            triangles.push([c, mca, mbc]);
            triangles.push([mab, mbc, mca]);
        }
        Mesh::from_parts(vertices, triangles, boundary).expect("red refinement preserves validity")
    }

    /// Barycentric coordinates of `x` w.r.t. triangle `t`.
    pub fn barycentric(&self, t: usize, x: Vec2) -> [f64; 3] {
        let [a, b, c] = self.triangle_vertices(t);
        let total = (b - a).cross(c - a);
        let la = (b - x).cross(c - x) / total;
        let lb = (c - x).cross(a - x) / total;
        let lc = (a - x).cross(b - x) / total;
        [la, lb, lc]
    }

    /// Find a triangle containing `x` together with barycentric coordinates.
    /// On shared edges/vertices the lowest triangle index wins.
    pub fn locate(&self, x: Vec2) -> Result<(usize, [f64; 3])> {
        for t in 0..self.triangles.len() {
            let bary = self.barycentric(t, x);
            if bary.iter().all(|&l| l >= -GEOM_TOL) {
                return Ok((t, bary));
            }
        }
        Err(Error::PointOutsideDomain(x.x, x.y))
    }

    /// Sum of triangle areas; equals the polygon area for a valid mesh.
    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Check conformity: every edge is shared by at most two triangles with
    /// identical endpoint indices (guaranteed by index-based construction),
    /// and interior edges by exactly two.
    pub fn check_conformity(&self) -> Result<()> {
        for (edge, count) in self.edge_counts() {
            if count > 2 {
                return Err(Error::InvalidMesh(format!(
                    "edge {edge:?} shared by {count} triangles"
                )));
            }
        }
        Ok(())
    }
}
