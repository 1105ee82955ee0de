//! Experiment configuration schema. Unknown keys are rejected everywhere.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::{ConvexPolygon, Mesh};
use crate::quadrature::SingularIntegrationPolicy;
use crate::solvers::Method;
use crate::weights::WeightSpec;
use serde::Deserialize;

pub const DEFAULT_SEED: u64 = 0xA9;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    StructuredUnitSquare { n: usize },
    Polygon { vertices: Vec<[f64; 2]>, target_h: f64 },
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec::StructuredUnitSquare { n: 4 }
    }
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        match self {
            MeshSpec::StructuredUnitSquare { n } => {
                if *n < 2 {
                    return Err(Error::Config("structured mesh needs n >= 2".into()));
                }
                Ok(Mesh::structured_unit_square(*n))
            }
            MeshSpec::Polygon { vertices, target_h } => {
                let poly = self.polygon()?;
                let _ = vertices;
                Mesh::triangulate(&poly, *target_h)
            }
        }
    }

    pub fn polygon(&self) -> Result<ConvexPolygon> {
        match self {
            MeshSpec::StructuredUnitSquare { .. } => Ok(ConvexPolygon::unit_square()),
            MeshSpec::Polygon { vertices, .. } => {
                ConvexPolygon::new(vertices.iter().map(|&[x, y]| Vec2::new(x, y)).collect())
            }
        }
    }
}

/// Registry key with free-form JSON parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSpec {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    10_000
}

fn default_method() -> Method {
    Method::Newton
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub continuation: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: default_method(),
            rel_tol: default_rel_tol(),
            max_iter: default_max_iter(),
            continuation: false,
        }
    }
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mesh: MeshSpec,
    /// Defaults to the unit weight.
    pub weight: Option<WeightSpec>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Data registry key for solve/convergence commands.
    pub problem: Option<NamedSpec>,
    /// Nonlinearity registry key; absent means the Laplacian.
    pub model: Option<NamedSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub levels: Option<usize>,
    pub probe_refinements: Option<usize>,
    #[serde(default)]
    pub quadrature: SingularIntegrationPolicy,
    pub seed: Option<u64>,
    // weight-check knobs.
    pub num_balls: Option<usize>,
    pub radii: Option<(f64, f64)>,
    pub eps_grid: Option<Vec<f64>>,
    // structure-check knobs.
    pub sample_count: Option<usize>,
    pub radius_schedule: Option<Vec<f64>>,
    // oscillation-check inputs.
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub c_delta: Option<f64>,
    pub c_r: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8], origin: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_slice(bytes).map_err(|e| {
            Error::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
        })?;
        cfg.quadrature.validate()?;
        if !(cfg.p > 1.0) {
            return Err(Error::Config(format!("p must lie in (1, inf), got {}", cfg.p)));
        }
        Ok(cfg)
    }

    pub fn weight(&self) -> WeightSpec {
        self.weight.clone().unwrap_or(WeightSpec::constant(1.0))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}
