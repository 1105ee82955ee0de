//! P1 finite elements for quasilinear elliptic boundary value problems
//! with data in Muckenhoupt-weighted Lebesgue spaces.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod fem;
pub mod io;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod registry;
pub mod solvers;
pub mod weights;

pub use error::{Error, Result};
pub use geometry::{Mat2, Vec2};
pub use mesh::{ConvexPolygon, Mesh};
pub use weights::WeightSpec;
