//! Diffeomorphic registration in bounded planar domains.
//!
//! Two families of parametric self-maps are provided: vector flows
//! ([`vectorflow`]), obtained by integrating boundary-tangent velocity
//! fields, and compositional maps ([`compositional`]), displacement ansatze
//! on polytopes with Jacobian-determinant bijectivity control. Registration
//! targets live in [`targets`], metric-preconditioned descent in
//! [`optimizer`], and modal dimensionality reduction in [`modal`].
//!
//! Per-point workloads run data-parallel through [`exec`] when the
//! `parallel` feature (on by default) is enabled; outputs are identical
//! either way.

pub mod basis;
pub mod compositional;
pub mod error;
pub mod exec;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod modal;
pub mod optimizer;
pub mod poly;
pub mod targets;
pub mod vectorflow;

pub use error::{Error, Result};

/// Planar point or vector.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2x2 matrix (Jacobians, gradients).
pub type Mat2 = nalgebra::Matrix2<f64>;
