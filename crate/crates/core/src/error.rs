use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("cell edge must be positive and finite, got {0}")]
    NonPositiveEdge(f64),
    #[error("L must be >= 1")]
    ZeroSupercell,
    #[error("points per cell edge must be even and >= 4, got {0}")]
    BadGridSize(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("fields live on different lattices")]
    LatticeMismatch,
    #[error("field dump is malformed: {0}")]
    BadDump(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("Gaussian width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("periodic nuclear charge must be positive, got {0}")]
    NonPositiveCharge(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("{name} = {value} is outside its domain: {reason}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("electron number Q must be nonnegative, got {0}")]
    NegativeCharge(f64),
    #[error("no admissible state for the requested charge: Z L^3 + q = {0} < 0")]
    InfeasibleCharge(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("solver did not converge: residual {residual:e} after {iters} iterations")]
    NotConverged { residual: f64, iters: usize },
    #[error("perfect-crystal density is not strictly positive on the grid (min u0 = {0:e})")]
    NonPositiveHost(f64),
    #[error("fixed-point iteration diverged (damping trace: {trace:?})")]
    Diverged { trace: Vec<f64> },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
