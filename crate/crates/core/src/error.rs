//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("facet index {index} out of range (domain has {count} facets)")]
    FacetIndex { index: usize, count: usize },

    #[error("unsupported quadrature order {0} (supported: 1..=5)")]
    UnsupportedQuadratureOrder(usize),

    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error(
        "trajectory for seed {seed} left the domain at step {step} \
         (distance {distance:.3e} exceeds leak tolerance {tol:.3e})"
    )]
    BoundaryLeak {
        seed: usize,
        step: usize,
        distance: f64,
        tol: f64,
    },

    #[error("point ({x}, {y}) lies outside the domain closure")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("conditioning failure: {0}")]
    Conditioning(String),

    #[error("EM weight underflow: {0}; increase the bandwidth sigma")]
    EmUnderflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
