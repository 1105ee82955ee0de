//! Triangle quadrature: a fixed degree-4 symmetric rule for smooth
//! integrands, and recursive red subdivision toward point singularities.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::weights::WeightSpec;
use serde::{Deserialize, Serialize};

/// Symmetric quadrature rule in barycentric coordinates. Weights are
/// normalized to the reference-triangle measure (they sum to 1).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Six-point symmetric rule, exact for polynomials of degree <= 4.
    pub fn degree4() -> &'static QuadratureRule {
        use std::sync::OnceLock;
        static RULE: OnceLock<QuadratureRule> = OnceLock::new();
        RULE.get_or_init(|| {
            let a = 0.445_948_490_915_965;
            let wa = 0.223_381_589_678_011;
            let b = 0.091_576_213_509_771;
            let wb = 0.109_951_743_655_322;
            QuadratureRule {
                points: vec![
                    [a, a, 1.0 - 2.0 * a],
                    [a, 1.0 - 2.0 * a, a],
                    [1.0 - 2.0 * a, a, a],
                    [b, b, 1.0 - 2.0 * b],
                    [b, 1.0 - 2.0 * b, b],
                    [1.0 - 2.0 * b, b, b],
                ],
                weights: vec![wa, wa, wa, wb, wb, wb],
                degree: 4,
            }
        })
    }
}

/// Controls recursive subdivision toward a singular point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingularIntegrationPolicy {
    pub max_depth: usize,
    pub rel_tol: f64,
}

impl Default for SingularIntegrationPolicy {
    fn default() -> Self {
        SingularIntegrationPolicy {
            max_depth: 20,
            rel_tol: 1e-8,
        }
    }
}

impl SingularIntegrationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Parameter("max_depth must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Parameter("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

pub type Triangle = [Vec2; 3];

pub fn triangle_area(tri: &Triangle) -> f64 {
    0.5 * (tri[1] - tri[0]).cross(tri[2] - tri[0])
}

fn barycentric(tri: &Triangle, x: Vec2) -> [f64; 3] {
    let total = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    [
        (tri[1] - x).cross(tri[2] - x) / total,
        (tri[2] - x).cross(tri[0] - x) / total,
        (tri[0] - x).cross(tri[1] - x) / total,
    ]
}

/// Degree-4 quadrature of `f` over a physical triangle.
pub fn integrate<F: Fn(Vec2) -> f64>(tri: &Triangle, f: F) -> Result<f64> {
    let rule = QuadratureRule::degree4();
    let area = triangle_area(tri);
    let mut sum = 0.0;
    for (bary, &w) in rule.points.iter().zip(&rule.weights) {
        let x = tri[0].scale(bary[0]) + tri[1].scale(bary[1]) + tri[2].scale(bary[2]);
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand(x.x, x.y));
        }
        sum += w * v;
    }
    Ok(sum * area)
}

fn red_children(tri: &Triangle) -> [Triangle; 4] {
    let mab = tri[0].midpoint(tri[1]);
    let mbc = tri[1].midpoint(tri[2]);
    let mca = tri[2].midpoint(tri[0]);
    [
        [tri[0], mab, mca],
        [tri[1], mbc, mab],
        [tri[2], mca, mbc],
        [mab, mbc, mca],
    ]
}

/// Index of the red child containing the barycentric point `bary` of the
/// parent. Corner child k covers `bary[k] >= 1/2`; ties go to the lowest k.
fn containing_child(bary: [f64; 3]) -> usize {
    for k in 0..3 {
        if bary[k] >= 0.5 {
            return k;
        }
    }
    3
}

const INFLATE_TOL: f64 = 1e-9;
const SHELL_GROWTH: f64 = 0.999;
const SHELL_GROWTH_RUN: usize = 5;

/// Integrate `f` over `tri` when `f` may be singular at the single point
/// `singular`. If the point lies outside the slightly inflated triangle this
/// is plain degree-4 quadrature; otherwise the triangle is subdivided
/// recursively toward the singular point, summing the regular children per
/// depth, until successive totals agree to `policy.rel_tol` or `max_depth`
/// is reached. Geometrically growing partial sums over five consecutive
/// depths raise a divergence error.
pub fn integrate_singular<F: Fn(Vec2) -> f64>(
    tri: &Triangle,
    f: F,
    singular: Vec2,
    policy: &SingularIntegrationPolicy,
) -> Result<f64> {
    policy.validate()?;
    let bary = barycentric(tri, singular);
    if bary.iter().any(|&l| l < -INFLATE_TOL) {
        return integrate(tri, f);
    }

    let mut regular_total = 0.0;
    let mut current = *tri;
    let mut prev_total = f64::INFINITY;
    let mut prev_shell = f64::INFINITY;
    let mut growth_run = 0usize;
    for _ in 0..policy.max_depth {
        let children = red_children(&current);
        let k = containing_child(barycentric(&current, singular));
        let mut shell = 0.0;
        for (j, child) in children.iter().enumerate() {
            if j != k {
                shell += integrate(child, &f)?;
            }
        }
        regular_total += shell;
        let remainder = integrate(&children[k], &f)?;
        let total = regular_total + remainder;

        if (total - prev_total).abs() <= policy.rel_tol * total.abs().max(1e-300) {
            return Ok(total);
        }
        if shell.abs() >= SHELL_GROWTH * prev_shell.abs() && shell.abs() > 0.0 {
            growth_run += 1;
            if growth_run >= SHELL_GROWTH_RUN {
                return Err(Error::Divergence(format!(
                    "partial sums near ({}, {}) are not decreasing (last shell {shell:e})",
                    singular.x, singular.y
                )));
            }
        } else {
            growth_run = 0;
        }

        prev_total = total;
        prev_shell = shell;
        current = children[k];
    }
    Ok(prev_total)
}

/// Integral of f * omega over a triangle; subdivides toward the weight's
/// singular point when there is one.
pub fn integrate_weighted<F: Fn(Vec2) -> f64>(
    tri: &Triangle,
    f: F,
    w: &WeightSpec,
    policy: &SingularIntegrationPolicy,
) -> Result<f64> {
    match w.singular_point() {
        None => integrate(tri, |x| f(x) * w.eval(x)),
        Some(s) => integrate_singular(tri, |x| f(x) * w.eval(x), s, policy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Triangle {
        [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]
    }

    /// Exact integral of x^i y^j over the reference triangle.
    fn monomial_exact(i: u32, j: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        fact(i) * fact(j) / fact(i + j + 2)
    }

    #[test]
    fn rule_weights_sum_to_one() {
        let rule = QuadratureRule::degree4();
        let s: f64 = rule.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn rule_exact_for_monomials_up_to_degree() {
        let tri = reference();
        for i in 0..=4u32 {
            for j in 0..=(4 - i) {
                let got = integrate(&tri, |p| p.x.powi(i as i32) * p.y.powi(j as i32)).unwrap();
                assert!(
                    (got - monomial_exact(i, j)).abs() < 1e-13,
                    "x^{i} y^{j}: got {got}, want {}",
                    monomial_exact(i, j)
                );
            }
        }
    }

    #[test]
    fn constant_on_half_area_triangle() {
        let got = integrate(&reference(), |_| 1.0).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_on_reference() {
        let got = integrate(&reference(), |p| p.x).unwrap();
        assert!((got - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn x2y2_on_reference() {
        // Symbolic value 1/180.
        let got = integrate(&reference(), |p| p.x * p.x * p.y * p.y).unwrap();
        assert!((got - 1.0 / 180.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_integrand_errors() {
        let r = integrate(&reference(), |p| 1.0 / (p.x - p.x));
        assert!(matches!(r, Err(Error::NonFiniteIntegrand(_, _))));
    }

    #[test]
    fn singular_outside_equals_plain() {
        let tri = reference();
        let far = Vec2::new(5.0, 5.0);
        let f = |p: Vec2| (p.x + 0.3) * (p.y + 1.0);
        let a = integrate(&tri, f).unwrap();
        let b = integrate_singular(&tri, f, far, &SingularIntegrationPolicy::default()).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn inverse_radius_matches_polar_oracle() {
        // Integral of |x|^-1 over the reference triangle, polar oracle:
        // int_0^{pi/2} dtheta / (cos + sin) = sqrt(2) ln(1 + sqrt(2)).
        let oracle = std::f64::consts::SQRT_2 * (1.0 + std::f64::consts::SQRT_2).ln();
        let got = integrate_singular(
            &reference(),
            |p| 1.0 / p.norm(),
            Vec2::ZERO,
            &SingularIntegrationPolicy::default(),
        )
        .unwrap();
        assert!((got - oracle).abs() < 1e-3, "got {got}, oracle {oracle}");
    }

    #[test]
    fn inverse_radius_squared_diverges() {
        let r = integrate_singular(
            &reference(),
            |p| 1.0 / p.norm_sq(),
            Vec2::ZERO,
            &SingularIntegrationPolicy::default(),
        );
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn additivity_over_red_children() {
        let tri = reference();
        // Degree-4 polynomial: both sides are exact.
        let f = |p: Vec2| 1.0 + 2.0 * p.x - p.y + 3.0 * p.x * p.y + p.x.powi(2) * p.y.powi(2);
        let parent = integrate(&tri, f).unwrap();
        let children = red_children(&tri);
        let sum: f64 = children.iter().map(|c| integrate(c, f).unwrap()).sum();
        assert!((parent - sum).abs() < 1e-12 * parent.abs());
    }

    #[test]
    fn subdivision_totals_cauchy_for_integrable_weight() {
        // gamma = -0.5: successive-depth differences must shrink.
        let tri = reference();
        let mut prev = f64::INFINITY;
        let mut diffs = Vec::new();
        for depth in 2..10 {
            let policy = SingularIntegrationPolicy {
                max_depth: depth,
                rel_tol: 1e-16,
            };
            let v = integrate_singular(&tri, |p| p.norm().powf(-0.5), Vec2::ZERO, &policy).unwrap();
            if prev.is_finite() {
                diffs.push((v - prev).abs());
            }
            prev = v;
        }
        for w in diffs.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn interior_singularity_converges() {
        // Singular point strictly inside the element.
        let tri = reference();
        let s = Vec2::new(0.25, 0.25);
        let got = integrate_singular(
            &tri,
            |p| (p - s).norm().powf(-0.5),
            s,
            &SingularIntegrationPolicy::default(),
        )
        .unwrap();
        assert!(got.is_finite() && got > 0.0);
    }

    #[test]
    fn weighted_with_unit_weight_equals_plain() {
        let tri = reference();
        let f = |p: Vec2| p.x * p.y + 2.0;
        let a = integrate(&tri, f).unwrap();
        let b = integrate_weighted(
            &tri,
            f,
            &WeightSpec::constant(1.0),
            &SingularIntegrationPolicy::default(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_singularity_outside_matches_plain_product() {
        let tri = reference();
        let w = WeightSpec::power(Vec2::new(4.0, 4.0), -0.5);
        let f = |p: Vec2| p.x + 1.0;
        let a = integrate(&tri, |p| f(p) * w.eval(p)).unwrap();
        let b =
            integrate_weighted(&tri, f, &w, &SingularIntegrationPolicy::default()).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn policy_validation() {
        assert!(SingularIntegrationPolicy {
            max_depth: 0,
            rel_tol: 1e-8
        }
        .validate()
        .is_err());
        assert!(SingularIntegrationPolicy {
            max_depth: 5,
            rel_tol: 0.0
        }
        .validate()
        .is_err());
    }
}
