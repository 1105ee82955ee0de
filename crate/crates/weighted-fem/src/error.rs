use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point ({0}, {1}) is outside the domain")]
    PointOutsideDomain(f64, f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("integrand returned a non-finite value at ({0}, {1})")]
    NonFiniteIntegrand(f64, f64),

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("linear solver failed: {0}")]
    LinearSolve(String),

    #[error("nonlinear solver did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
