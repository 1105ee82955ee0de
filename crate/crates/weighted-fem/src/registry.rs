//! Built-in manufactured problems, keyed by name with JSON parameters.

use crate::analysis::Manufactured;
use crate::error::{Error, Result};
use crate::fem::{ScalarFn, VectorFn};
use crate::geometry::Vec2;
use std::f64::consts::PI;
use std::sync::Arc;

/// Data for one registered problem: flux f, source g, the exact solution,
/// and the singular point of the data when there is one.
#[derive(Clone)]
pub struct RegisteredProblem {
    pub f: VectorFn,
    pub g: ScalarFn,
    pub exact: Manufactured,
    pub singular_point: Option<Vec2>,
}

pub const PROBLEM_NAMES: [&str; 2] = ["log_cutoff", "sin_sin"];

fn reject_unknown(params: &serde_json::Value, allowed: &[&str], name: &str) -> Result<()> {
    if let Some(map) = params.as_object() {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "problem {name:?} does not take parameter {key:?} (allowed: {allowed:?})"
                )));
            }
        }
    }
    Ok(())
}

/// C^2 quintic cutoff: 1 on [0, r0], 0 on [r1, inf); returns (eta, eta').
pub fn quintic_cutoff(r: f64, r0: f64, r1: f64) -> (f64, f64) {
    if r <= r0 {
        return (1.0, 0.0);
    }
    if r >= r1 {
        return (0.0, 0.0);
    }
    let s = (r - r0) / (r1 - r0);
    let smooth = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let dsmooth = 30.0 * s * s * (1.0 - s) * (1.0 - s) / (r1 - r0);
    (1.0 - smooth, -dsmooth)
}

pub fn problem_from_name(name: &str, params: &serde_json::Value) -> Result<RegisteredProblem> {
    match name {
        "sin_sin" => {
            reject_unknown(params, &[], name)?;
            let value: ScalarFn = Arc::new(|x: Vec2| (PI * x.x).sin() * (PI * x.y).sin());
            let gradient: VectorFn = Arc::new(|x: Vec2| {
                Vec2::new(
                    PI * (PI * x.x).cos() * (PI * x.y).sin(),
                    PI * (PI * x.x).sin() * (PI * x.y).cos(),
                )
            });
            Ok(RegisteredProblem {
                f: Arc::new(|_| Vec2::ZERO),
                g: Arc::new(|x: Vec2| 2.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin()),
                exact: Manufactured { value, gradient },
                singular_point: None,
            })
        }
        "log_cutoff" => {
            reject_unknown(params, &["center", "r0", "r1"], name)?;
            let center = match params.get("center") {
                None => Vec2::new(0.5, 0.5),
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("bad center: {e}")))?,
            };
            let num = |key: &str, default: f64| -> Result<f64> {
                match params.get(key) {
                    None => Ok(default),
                    Some(v) => v
                        .as_f64()
                        .ok_or_else(|| Error::Config(format!("{key} must be a number"))),
                }
            };
            let r0 = num("r0", 0.15)?;
            let r1 = num("r1", 0.35)?;
            if !(0.0 < r0 && r0 < r1) {
                return Err(Error::Config(format!(
                    "log_cutoff needs 0 < r0 < r1, got ({r0}, {r1})"
                )));
            }
            // u* = eta(r) log r, f = grad u*, g = 0: u* is the exact
            // solution of -div(grad u) = -div f by construction.
            let grad = move |x: Vec2| {
                let d = x - center;
                let r = d.norm();
                if r < 1e-15 {
                    return Vec2::ZERO;
                }
                let (eta, deta) = quintic_cutoff(r, r0, r1);
                d.scale((deta * r.ln() + eta / r) / r)
            };
            let value: ScalarFn = Arc::new(move |x: Vec2| {
                let r = (x - center).norm();
                if r < 1e-300 {
                    return 0.0;
                }
                quintic_cutoff(r, r0, r1).0 * r.ln()
            });
            Ok(RegisteredProblem {
                f: Arc::new(grad),
                g: Arc::new(|_| 0.0),
                exact: Manufactured {
                    value,
                    gradient: Arc::new(grad),
                },
                singular_point: Some(center),
            })
        }
        other => Err(Error::Config(format!(
            "unknown problem {other:?}; known: {PROBLEM_NAMES:?}"
        ))),
    }
}

/// Stable listing of built-in problems, nonlinearities, and weight families
/// with their parameter schemas.
pub fn registry_listing() -> String {
    let mut out = String::new();
    out.push_str("problems:\n");
    out.push_str("  log_cutoff {center: [x, y] = [0.5, 0.5], r0 = 0.15, r1 = 0.35}\n");
    out.push_str("  sin_sin {}\n");
    out.push_str("nonlinearities:\n");
    out.push_str("  linear {matrix: [[a, b], [b, d]] = identity}\n");
    out.push_str("  uhlenbeck_exp {}\n");
    out.push_str("  uhlenbeck_rational {a_tilde = 0.5}\n");
    out.push_str("weight families:\n");
    out.push_str("  constant {value}\n");
    out.push_str("  power {center: [x, y], gamma}\n");
    out.push_str("  lattice_min {left, right}\n");
    out.push_str("  lattice_max {left, right}\n");
    out.push_str("  pow_of {base, exponent}\n");
    out.push_str("  maximal_factor {w, eps, k}\n");
    out
}
