//! Small fixed-size vector/matrix types for 2D geometry.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Serializes as a `[x, y]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product, i.e. the signed parallelogram area.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, t: f64) -> Vec2 {
        Vec2::new(self.x * t, self.y * t)
    }

    pub fn midpoint(self, other: Vec2) -> Vec2 {
        Vec2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, t: f64) -> Vec2 {
        self.scale(t)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn scaled_identity(t: f64) -> Self {
        Mat2::diag(t, t)
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    pub fn add(self, other: Mat2) -> Mat2 {
        Mat2::new(
            self.a + other.a,
            self.b + other.b,
            self.c + other.c,
            self.d + other.d,
        )
    }

    pub fn sub(self, other: Mat2) -> Mat2 {
        Mat2::new(
            self.a - other.a,
            self.b - other.b,
            self.c - other.c,
            self.d - other.d,
        )
    }

    pub fn scale(self, t: f64) -> Mat2 {
        Mat2::new(self.a * t, self.b * t, self.c * t, self.d * t)
    }

    pub fn frobenius_norm(self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    /// Spectral (operator 2-) norm; closed form for 2x2.
    pub fn spectral_norm(self) -> f64 {
        // Largest singular value of [[a,b],[c,d]].
        let f = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d;
        let det = self.a * self.d - self.b * self.c;
        let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
        (0.5 * (f + disc)).sqrt()
    }

    pub fn is_symmetric(self, tol: f64) -> bool {
        (self.b - self.c).abs() <= tol
    }

    /// Eigenvalues of a symmetric 2x2 matrix, ascending.
    pub fn sym_eigenvalues(self) -> (f64, f64) {
        let tr = self.a + self.d;
        let det = self.a * self.d - self.b * self.c;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 - disc, tr / 2.0 + disc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_sign_is_ccw() {
        let e1 = Vec2::new(1.0, 0.0);
        let e2 = Vec2::new(0.0, 1.0);
        assert!(e1.cross(e2) > 0.0);
        assert!(e2.cross(e1) < 0.0);
    }

    #[test]
    fn spectral_norm_of_diag() {
        let m = Mat2::diag(3.0, -5.0);
        assert!((m.spectral_norm() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eigenvalues_order() {
        let m = Mat2::new(2.0, 1.0, 1.0, 2.0);
        let (lo, hi) = m.sym_eigenvalues();
        assert!((lo - 1.0).abs() < 1e-14);
        assert!((hi - 3.0).abs() < 1e-14);
    }
}
