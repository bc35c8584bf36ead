//! Vector flows: maps obtained by integrating boundary-tangent velocity
//! fields from time 0 to 1, together with their coefficient sensitivities
//! and adjoint gradients.

mod gradient;
mod integrate;

pub use gradient::{
    adjoint_gradient_distributed, adjoint_gradient_pointwise, coefficient_sensitivity,
};
pub use integrate::{
    continuity_gap, integrate_flow, integrate_flow_gradient, inverse_map, jacobian_logdet,
    ContinuityReport,
};

use crate::basis::BasisRef;
use crate::error::{Error, Result};
use crate::io::fmt_g17;
use crate::{Mat2, Vec2};
use nalgebra::DVector;
use std::path::Path;

/// A velocity field with its spatial gradient, the interface the
/// integrators consume.
pub trait VelocityField: Sync {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2;

    /// Spatial Jacobian: entry `(r, c)` is d v_r / d x_c.
    fn gradient(&self, x: Vec2, t: f64) -> Mat2;

    fn divergence(&self, x: Vec2, t: f64) -> f64 {
        self.gradient(x, t).trace()
    }
}

/// Linear-in-coefficients velocity ansatz over a space-time basis:
/// `v(x, t; a) = sum_i a_i phi_i(x, t)`.
#[derive(Clone)]
pub struct VelocityModel {
    basis: BasisRef,
    coefficients: DVector<f64>,
}

impl VelocityModel {
    pub fn new(basis: BasisRef, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coefficients.len(),
            });
        }
        Ok(VelocityModel {
            basis,
            coefficients,
        })
    }

    pub fn zero(basis: BasisRef) -> Self {
        let n = basis.len();
        VelocityModel {
            basis,
            coefficients: DVector::zeros(n),
        }
    }

    pub fn basis(&self) -> &BasisRef {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn with_coefficients(&self, coefficients: DVector<f64>) -> Result<Self> {
        VelocityModel::new(self.basis.clone(), coefficients)
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn basis_eval(&self, member: usize, x: Vec2, t: f64) -> Vec2 {
        self.basis.eval(member, x, t)
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        let mut v = Vec2::zeros();
        for i in 0..self.coefficients.len() {
            let a = self.coefficients[i];
            if a != 0.0 {
                v += self.basis.eval(i, x, t) * a;
            }
        }
        v
    }

    fn gradient(&self, x: Vec2, t: f64) -> Mat2 {
        let mut g = Mat2::zeros();
        for i in 0..self.coefficients.len() {
            let a = self.coefficients[i];
            if a != 0.0 {
                g += self.basis.eval_grad(i, x, t) * a;
            }
        }
        g
    }
}

/// Time reversal `w(x, s) = -v(x, 1 - s)`; its flow inverts the flow of `v`.
pub struct ReversedField<'a, F: VelocityField + ?Sized>(pub &'a F);

impl<F: VelocityField + ?Sized> VelocityField for ReversedField<'_, F> {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        -self.0.velocity(x, 1.0 - t)
    }

    fn gradient(&self, x: Vec2, t: f64) -> Mat2 {
        -self.0.gradient(x, 1.0 - t)
    }
}

/// Explicit Runge-Kutta scheme on a uniform step grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Rk2,
    Rk4,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
        }
    }
}

/// Integration controls shared by every flow operation.
#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    pub steps: usize,
    pub scheme: Scheme,
    /// Discrete trajectories may exit the closure by the integration error;
    /// beyond this distance the run aborts with a boundary-leak error.
    pub leak_tol: f64,
}

impl FlowParams {
    pub fn new(steps: usize) -> Self {
        FlowParams {
            steps,
            scheme: Scheme::Rk4,
            leak_tol: 1e-6,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_leak_tol(mut self, leak_tol: f64) -> Self {
        self.leak_tol = leak_tol;
        self
    }
}

/// Per-seed trajectories of the flow, with optional gradient and
/// log-Jacobian histories on the same time grid.
#[derive(Clone, Debug)]
pub struct FlowSolution {
    pub seeds: Vec<Vec2>,
    /// Uniform grid 0 = t_0 < ... < t_K = 1.
    pub times: Vec<f64>,
    /// positions[seed][k] is X(seed, t_k).
    pub positions: Vec<Vec<Vec2>>,
    pub gradients: Option<Vec<Vec<Mat2>>>,
    pub log_jacobian: Option<Vec<Vec<f64>>>,
    pub scheme: Scheme,
}

impl FlowSolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Final position of seed `i`.
    pub fn endpoint(&self, i: usize) -> Vec2 {
        *self.positions[i].last().expect("nonempty trajectory")
    }

    pub fn endpoints(&self) -> Vec<Vec2> {
        (0..self.seeds.len()).map(|i| self.endpoint(i)).collect()
    }

    /// Final gradient matrices, when integrated.
    pub fn endpoint_gradients(&self) -> Option<Vec<Mat2>> {
        self.gradients
            .as_ref()
            .map(|g| g.iter().map(|traj| *traj.last().unwrap()).collect())
    }

    pub fn endpoint_log_jacobians(&self) -> Option<Vec<f64>> {
        self.log_jacobian
            .as_ref()
            .map(|l| l.iter().map(|traj| *traj.last().unwrap()).collect())
    }

    /// CSV dump: `seed_id, t, x1, x2[, logJ]`, one row per (seed, node).
    pub fn to_csv(&self) -> String {
        let with_logj = self.log_jacobian.is_some();
        let mut out = String::from(if with_logj {
            "seed_id,t,x1,x2,logJ\n"
        } else {
            "seed_id,t,x1,x2\n"
        });
        for (i, traj) in self.positions.iter().enumerate() {
            for (k, p) in traj.iter().enumerate() {
                out.push_str(&format!(
                    "{i},{},{},{}",
                    fmt_g17(self.times[k]),
                    fmt_g17(p.x),
                    fmt_g17(p.y)
                ));
                if let Some(logj) = &self.log_jacobian {
                    out.push_str(&format!(",{}", fmt_g17(logj[i][k])));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluates the flow map at given seeds and returns the endpoints only.
pub fn flow_map(
    field: &dyn VelocityField,
    domain: &crate::geometry::PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
) -> Result<Vec<Vec2>> {
    Ok(integrate_flow(field, domain, seeds, params)?.endpoints())
}
