//! Analytic bijections between a polytope and a curved domain.

use crate::error::{Error, Result};
use crate::{Mat2, Vec2};
use std::fmt;
use std::sync::Arc;

type PointFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;
type JacobianFn = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

/// A user-supplied analytic bijection from a reference polytope onto a
/// curved domain, with its analytic inverse and forward Jacobian. No
/// numerical inversion is performed.
#[derive(Clone)]
pub struct CurvedMap {
    forward: PointFn,
    inverse: PointFn,
    forward_gradient: JacobianFn,
}

impl fmt::Debug for CurvedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CurvedMap {..}")
    }
}

impl CurvedMap {
    pub fn new(forward: PointFn, inverse: PointFn, forward_gradient: JacobianFn) -> Self {
        CurvedMap {
            forward,
            inverse,
            forward_gradient,
        }
    }

    pub fn identity() -> Self {
        CurvedMap {
            forward: Arc::new(|x| x),
            inverse: Arc::new(|x| x),
            forward_gradient: Arc::new(|_| Mat2::identity()),
        }
    }

    /// Affine map `x -> B x + c` with invertible `B`.
    pub fn affine(b: Mat2, c: Vec2) -> Result<Self> {
        let b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("affine curved map needs invertible B".into()))?;
        Ok(CurvedMap {
            forward: Arc::new(move |x| b * x + c),
            inverse: Arc::new(move |y| b_inv * (y - c)),
            forward_gradient: Arc::new(move |_| b),
        })
    }

    /// Shear `(x, y) -> (x, y + alpha x (1 - x))`: bends the horizontal
    /// edges of the unit square into parabolic arcs while keeping vertical
    /// edges fixed. Unit Jacobian determinant everywhere.
    pub fn parabolic_shear(alpha: f64) -> Self {
        CurvedMap {
            forward: Arc::new(move |x| Vec2::new(x.x, x.y + alpha * x.x * (1.0 - x.x))),
            inverse: Arc::new(move |y| Vec2::new(y.x, y.y - alpha * y.x * (1.0 - y.x))),
            forward_gradient: Arc::new(move |x| {
                Mat2::new(1.0, 0.0, alpha * (1.0 - 2.0 * x.x), 1.0)
            }),
        }
    }

    pub fn forward(&self, x: Vec2) -> Vec2 {
        (self.forward)(x)
    }

    pub fn inverse(&self, y: Vec2) -> Vec2 {
        (self.inverse)(y)
    }

    pub fn forward_gradient(&self, x: Vec2) -> Mat2 {
        (self.forward_gradient)(x)
    }

    /// Maximum of `|inverse(forward(x)) - x|` over the samples.
    pub fn roundtrip_error(&self, samples: &[Vec2]) -> f64 {
        samples
            .iter()
            .map(|&x| (self.inverse(self.forward(x)) - x).norm())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn interior_samples() -> Vec<Vec2> {
        let mut pts = Vec::new();
        for i in 1..10 {
            for j in 1..10 {
                pts.push(Vec2::new(i as f64 / 10.0, j as f64 / 10.0));
            }
        }
        pts
    }

    #[test]
    fn shear_roundtrip() {
        let psi = CurvedMap::parabolic_shear(0.3);
        assert!(psi.roundtrip_error(&interior_samples()) < 1e-14);
    }

    #[test]
    fn affine_gradient() {
        let b = Mat2::new(2.0, 0.5, 0.0, 1.5);
        let psi = CurvedMap::affine(b, Vec2::new(1.0, -1.0)).unwrap();
        assert!(psi.roundtrip_error(&interior_samples()) < 1e-14);
        let g = psi.forward_gradient(Vec2::new(0.2, 0.7));
        assert_relative_eq!(g[(0, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn singular_affine_rejected() {
        let b = Mat2::new(1.0, 2.0, 2.0, 4.0);
        assert!(CurvedMap::affine(b, Vec2::zeros()).is_err());
    }

    #[test]
    fn shear_maps_facet_interiors_onto_boundary() {
        // Vertical facets stay fixed; horizontal facets map onto the
        // parabolic arcs of the image boundary.
        let psi = CurvedMap::parabolic_shear(0.4);
        for s in [0.1, 0.5, 0.9] {
            let bottom = psi.forward(Vec2::new(s, 0.0));
            assert_relative_eq!(bottom.y, 0.4 * s * (1.0 - s), epsilon = 1e-15);
            let left = psi.forward(Vec2::new(0.0, s));
            assert_relative_eq!(left.x, 0.0, epsilon = 1e-15);
            assert_relative_eq!(left.y, s, epsilon = 1e-15);
        }
    }
}
