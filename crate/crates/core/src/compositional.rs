//! Compositional maps: identity plus a tangential displacement expansion on
//! a polytope, optionally conjugated by a curved-domain bijection, with
//! Jacobian-determinant bijectivity control.

use crate::basis::{BasisKind, BasisRef};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{CurvedMap, PolygonalDomain, QuadPoint};
use crate::targets::Target;
use crate::{Mat2, Vec2};
use nalgebra::DVector;

/// Displacement ansatz `N_p(xi; a) = xi + sum_i a_i phi_i(xi)` on the
/// polytope, mapped through `Psi` on curved domains.
#[derive(Clone)]
pub struct DisplacementModel {
    basis: BasisRef,
    coefficients: DVector<f64>,
    polytope: PolygonalDomain,
    curved: Option<CurvedMap>,
}

impl DisplacementModel {
    pub fn new(
        basis: BasisRef,
        coefficients: DVector<f64>,
        polytope: PolygonalDomain,
        curved: Option<CurvedMap>,
    ) -> Result<Self> {
        if basis.kind() != BasisKind::Spatial {
            return Err(Error::UnsupportedBasis(
                "compositional maps use a spatial basis".into(),
            ));
        }
        if coefficients.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coefficients.len(),
            });
        }
        Ok(DisplacementModel {
            basis,
            coefficients,
            polytope,
            curved,
        })
    }

    pub fn basis(&self) -> &BasisRef {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn with_coefficients(&self, coefficients: DVector<f64>) -> Result<Self> {
        DisplacementModel::new(
            self.basis.clone(),
            coefficients,
            self.polytope.clone(),
            self.curved.clone(),
        )
    }

    pub fn polytope(&self) -> &PolygonalDomain {
        &self.polytope
    }

    pub fn curved_map(&self) -> Option<&CurvedMap> {
        self.curved.as_ref()
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Displacement `sum_i a_i phi_i(xi)` at a polytope point.
    pub fn displacement(&self, xi: Vec2) -> Vec2 {
        let mut d = Vec2::zeros();
        for i in 0..self.coefficients.len() {
            let a = self.coefficients[i];
            if a != 0.0 {
                d += self.basis.eval(i, xi, 0.0) * a;
            }
        }
        d
    }

    /// `N_p(xi; a) = xi + displacement(xi)`, without a containment check.
    pub fn map_polytope_point(&self, xi: Vec2) -> Vec2 {
        xi + self.displacement(xi)
    }

    /// Jacobian matrix `I + sum_i a_i grad phi_i(xi)` of the polytope map.
    pub fn jacobian_matrix(&self, xi: Vec2) -> Mat2 {
        let mut g = Mat2::identity();
        for i in 0..self.coefficients.len() {
            let a = self.coefficients[i];
            if a != 0.0 {
                g += self.basis.eval_grad(i, xi, 0.0) * a;
            }
        }
        g
    }

    /// Evaluates the polytope map at points in the closure of the polytope.
    pub fn evaluate(&self, points: &[Vec2]) -> Result<Vec<Vec2>> {
        for &p in points {
            if !self.polytope.contains(p, 1e-10) {
                return Err(Error::PointOutsideDomain { x: p.x, y: p.y });
            }
        }
        Ok(exec::map_collect(points, |&p| self.map_polytope_point(p)))
    }

    /// Evaluates the curved-domain map `Psi o N_p o Psi^{-1}` at points of
    /// the curved domain.
    pub fn evaluate_curved(&self, points: &[Vec2]) -> Result<Vec<Vec2>> {
        let psi = self.curved.as_ref().ok_or_else(|| {
            Error::InvalidArgument("model has no curved map attached".into())
        })?;
        let pre: Vec<Vec2> = exec::map_collect(points, |&x| psi.inverse(x));
        for (&x, &xi) in points.iter().zip(&pre) {
            if !self.polytope.contains(xi, 1e-8) {
                return Err(Error::PointOutsideDomain { x: x.x, y: x.y });
            }
        }
        Ok(exec::map_collect(&pre, |&xi| {
            psi.forward(self.map_polytope_point(xi))
        }))
    }

    /// Maps sample points in whichever domain the model lives on.
    pub fn evaluate_auto(&self, points: &[Vec2]) -> Result<Vec<Vec2>> {
        if self.curved.is_some() {
            self.evaluate_curved(points)
        } else {
            self.evaluate(points)
        }
    }

    /// Jacobian determinant `det(I + sum_i a_i grad phi_i)` of the polytope
    /// map at each point.
    pub fn jacobian_field(&self, points: &[Vec2]) -> Vec<f64> {
        exec::map_collect(points, |&p| self.jacobian_matrix(p).determinant())
    }

    /// Map derivative with respect to coefficient `k` at a sample point of
    /// the model's domain: `phi_k` on polytopes, pushed through `grad Psi`
    /// on curved domains.
    pub fn coefficient_derivative(&self, k: usize, x: Vec2) -> Vec2 {
        match &self.curved {
            None => self.basis.eval(k, x, 0.0),
            Some(psi) => {
                let xi = psi.inverse(x);
                psi.forward_gradient(self.map_polytope_point(xi)) * self.basis.eval(k, xi, 0.0)
            }
        }
    }
}

/// Smooth hinge penalty on the Jacobian determinant:
/// `f_pen(a) = 1/Q sum_q max(0, eps_J - J_q(a))^2`, zero whenever the
/// sampled minimum determinant stays above the threshold.
///
/// The determinant of bubble-based displacements is extremal on the
/// boundary, so the sample set should combine quadrature nodes with
/// boundary-inclusive points; see [`JacobianPenalty::with_boundary_samples`].
#[derive(Clone, Debug)]
pub struct JacobianPenalty {
    pub threshold: f64,
    points: Vec<Vec2>,
}

impl JacobianPenalty {
    pub const DEFAULT_THRESHOLD: f64 = 0.01;

    pub fn new(threshold: f64, quad: Vec<QuadPoint>) -> Result<Self> {
        Self::from_points(threshold, quad.into_iter().map(|q| q.point).collect())
    }

    pub fn from_points(threshold: f64, points: Vec<Vec2>) -> Result<Self> {
        if threshold <= 0.0 {
            return Err(Error::InvalidArgument(
                "penalty threshold must be positive".into(),
            ));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "penalty needs sample points".into(),
            ));
        }
        Ok(JacobianPenalty { threshold, points })
    }

    /// Quadrature nodes plus an `n x n` bounding-box grid clipped to the
    /// domain closure, so boundary extrema of the determinant are sampled.
    pub fn with_boundary_samples(
        threshold: f64,
        quad: &[QuadPoint],
        domain: &crate::geometry::PolygonalDomain,
        n: usize,
    ) -> Result<Self> {
        let mut points: Vec<Vec2> = quad.iter().map(|q| q.point).collect();
        let (lo, hi) = domain.bounding_box();
        for i in 0..=n {
            for j in 0..=n {
                let p = Vec2::new(
                    lo.x + (hi.x - lo.x) * i as f64 / n as f64,
                    lo.y + (hi.y - lo.y) * j as f64 / n as f64,
                );
                if domain.contains(p, 1e-12) {
                    points.push(p);
                }
            }
        }
        Self::from_points(threshold, points)
    }

    pub fn points(&self) -> Vec<Vec2> {
        self.points.clone()
    }

    /// Value and gradient. The determinant derivative uses the adjugate
    /// form `d det(A) = tr(adj(A) dA)`, defined for every 2x2 matrix.
    pub fn value_and_gradient(&self, model: &DisplacementModel) -> (f64, DVector<f64>) {
        let m = model.len();
        let nq = self.points.len() as f64;
        let per_point: Vec<(f64, DVector<f64>)> = exec::map_collect(&self.points, |&point| {
            let jac = model.jacobian_matrix(point);
            let det = jac.determinant();
            let deficit = self.threshold - det;
            if deficit <= 0.0 {
                (0.0, DVector::zeros(m))
            } else {
                let adj = Mat2::new(jac[(1, 1)], -jac[(0, 1)], -jac[(1, 0)], jac[(0, 0)]);
                let mut grad = DVector::zeros(m);
                for k in 0..m {
                    let dg = model.basis().eval_grad(k, point, 0.0);
                    let ddet = (adj * dg).trace();
                    grad[k] = -2.0 * deficit * ddet;
                }
                (deficit * deficit, grad)
            }
        });
        let mut value = 0.0;
        let mut grad = DVector::zeros(m);
        for (v, g) in per_point {
            value += v;
            grad += g;
        }
        (value / nq, grad / nq)
    }
}

/// Gradient of a registration target through the compositional map:
/// contracts the per-coefficient map derivatives with the target's Frechet
/// derivative.
pub fn cm_target_gradient(model: &DisplacementModel, target: &Target) -> Result<DVector<f64>> {
    let points = target.sample_points();
    let images = model.evaluate_auto(&points)?;
    let m = model.len();
    let grads = exec::map_range(m, |k| {
        let h: Vec<Vec2> = points
            .iter()
            .map(|&x| model.coefficient_derivative(k, x))
            .collect();
        target.frechet(&images, &h)
    });
    let mut out = DVector::zeros(m);
    for (k, g) in grads.into_iter().enumerate() {
        out[k] = g?;
    }
    Ok(out)
}

/// Outcome of the sampled bijectivity check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BijectivityVerdict {
    Bijective { min_jacobian: f64 },
    Violated { min_jacobian: f64, location: Vec2 },
    /// The sampled minimum is positive but below the certification margin.
    Inconclusive { min_jacobian: f64 },
}

impl BijectivityVerdict {
    pub fn min_jacobian(&self) -> f64 {
        match *self {
            BijectivityVerdict::Bijective { min_jacobian }
            | BijectivityVerdict::Violated { min_jacobian, .. }
            | BijectivityVerdict::Inconclusive { min_jacobian } => min_jacobian,
        }
    }

    pub fn is_bijective(&self) -> bool {
        matches!(self, BijectivityVerdict::Bijective { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BijectivityVerdict::Bijective { .. } => "bijective",
            BijectivityVerdict::Violated { .. } => "violated",
            BijectivityVerdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

pub const BIJECTIVITY_MARGIN: f64 = 1e-6;

/// Samples the Jacobian determinant over a dense grid plus optional
/// quadrature points. A sampled minimum above the margin reports
/// `Bijective`; at or below zero reports `Violated` with the certificate
/// point; in between the check is `Inconclusive` (sampling is not a proof).
pub fn bijectivity_check(
    model: &DisplacementModel,
    grid_density: usize,
    extra_points: &[Vec2],
    margin: f64,
) -> BijectivityVerdict {
    let (lo, hi) = model.polytope().bounding_box();
    let n = grid_density.max(2);
    let mut sample_points: Vec<Vec2> = Vec::with_capacity(n * n + extra_points.len());
    for i in 0..=n {
        for j in 0..=n {
            let p = Vec2::new(
                lo.x + (hi.x - lo.x) * i as f64 / n as f64,
                lo.y + (hi.y - lo.y) * j as f64 / n as f64,
            );
            if model.polytope().contains(p, 1e-12) {
                sample_points.push(p);
            }
        }
    }
    sample_points.extend_from_slice(extra_points);

    let dets = model.jacobian_field(&sample_points);
    let (mut min_jacobian, mut argmin) = (f64::INFINITY, Vec2::zeros());
    for (&det, &p) in dets.iter().zip(&sample_points) {
        if det < min_jacobian {
            min_jacobian = det;
            argmin = p;
        }
    }
    if min_jacobian <= 0.0 {
        BijectivityVerdict::Violated {
            min_jacobian,
            location: argmin,
        }
    } else if min_jacobian > margin {
        BijectivityVerdict::Bijective { min_jacobian }
    } else {
        BijectivityVerdict::Inconclusive { min_jacobian }
    }
}

/// Grid fold detector: maps an `n x n` vertex grid and reports a pair of
/// cells whose image quadrilaterals have opposite signed areas, if any.
pub fn detect_fold(model: &DisplacementModel, n: usize) -> Option<(Vec2, Vec2)> {
    let (lo, hi) = model.polytope().bounding_box();
    let point = |i: usize, j: usize| -> Vec2 {
        Vec2::new(
            lo.x + (hi.x - lo.x) * i as f64 / n as f64,
            lo.y + (hi.y - lo.y) * j as f64 / n as f64,
        )
    };
    let mut positive: Option<Vec2> = None;
    let mut negative: Option<Vec2> = None;
    for i in 0..n {
        for j in 0..n {
            let corners = [
                point(i, j),
                point(i + 1, j),
                point(i + 1, j + 1),
                point(i, j + 1),
            ];
            if corners
                .iter()
                .any(|&c| !model.polytope().contains(c, 1e-12))
            {
                continue;
            }
            let image: Vec<Vec2> = corners.iter().map(|&c| model.map_polytope_point(c)).collect();
            let area = crate::geometry::quad_signed_area(&image);
            let center = (corners[0] + corners[2]) * 0.5;
            if area > 0.0 && positive.is_none() {
                positive = Some(center);
            }
            if area < 0.0 && negative.is_none() {
                negative = Some(center);
            }
            if let (Some(p), Some(q)) = (positive, negative) {
                return Some((p, q));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TangentialPolyBasis;
    use crate::geometry::Triangulation;
    use crate::poly::Poly;
    use crate::targets::{PointwiseTarget, WeightMode};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn bubble_x_model(eps: f64) -> DisplacementModel {
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(
            TangentialPolyBasis::from_members(
                &sq,
                vec![(0, Poly::bubble(0.0, 1.0), Poly::constant(1.0))],
            )
            .unwrap(),
        );
        DisplacementModel::new(basis, DVector::from_vec(vec![eps]), sq, None).unwrap()
    }

    #[test]
    fn identity_at_zero_coefficients() {
        let model = bubble_x_model(0.0);
        let pts = vec![Vec2::new(0.3, 0.8), Vec2::new(0.0, 0.5)];
        let images = model.evaluate(&pts).unwrap();
        assert_eq!(images, pts);
    }

    #[test]
    fn hand_evaluated_displacement() {
        // xi = (0.5, 0.2), a = 0.5, phi = (x1 (1-x1), 0):
        // image = (0.5 + 0.5 * 0.25, 0.2) = (0.625, 0.2).
        let model = bubble_x_model(0.5);
        let images = model.evaluate(&[Vec2::new(0.5, 0.2)]).unwrap();
        assert_relative_eq!(images[0].x, 0.625, epsilon = 1e-15);
        assert_relative_eq!(images[0].y, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn facet_points_stay_on_facet() {
        let model = bubble_x_model(0.7);
        let images = model.evaluate(&[Vec2::new(0.0, 0.7)]).unwrap();
        assert_eq!(images[0], Vec2::new(0.0, 0.7));
        // Bottom facet points keep x2 = 0 for every tangential member.
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 2).unwrap());
        let n = basis.len();
        let rich = DisplacementModel::new(
            basis,
            DVector::from_fn(n, |i, _| 0.1 * (i as f64 + 1.0).sin()),
            sq,
            None,
        )
        .unwrap();
        for s in [0.1, 0.4, 0.9] {
            let im = rich.evaluate(&[Vec2::new(s, 0.0)]).unwrap()[0];
            assert!(im.y.abs() < 1e-10);
        }
    }

    #[test]
    fn outside_point_rejected() {
        let model = bubble_x_model(0.1);
        assert!(model.evaluate(&[Vec2::new(1.2, 0.5)]).is_err());
    }

    #[test]
    fn jacobian_field_analytic_family() {
        // phi = (x1 (1-x1), 0): det = 1 + eps (1 - 2 x1).
        for eps in [0.25, 0.5, 0.9, 2.0] {
            let model = bubble_x_model(eps);
            let points: Vec<Vec2> = (0..=50)
                .flat_map(|i| {
                    (0..=50).map(move |j| Vec2::new(i as f64 / 50.0, j as f64 / 50.0))
                })
                .collect();
            let dets = model.jacobian_field(&points);
            let min = dets.iter().copied().fold(f64::INFINITY, f64::min);
            assert_relative_eq!(min, 1.0 - eps, epsilon = 1e-10);
        }
    }

    #[test]
    fn curved_map_identity_and_affine_composition() {
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(
            TangentialPolyBasis::from_members(
                &sq,
                vec![(0, Poly::bubble(0.0, 1.0), Poly::constant(1.0))],
            )
            .unwrap(),
        );
        let b = Mat2::new(2.0, 0.0, 0.3, 1.0);
        let c = Vec2::new(0.5, -0.2);
        let psi = CurvedMap::affine(b, c).unwrap();
        let model = DisplacementModel::new(
            basis.clone(),
            DVector::from_vec(vec![0.4]),
            sq.clone(),
            Some(psi.clone()),
        )
        .unwrap();

        // a = 0 gives the identity within the round-trip tolerance.
        let zero = model.with_coefficients(DVector::zeros(1)).unwrap();
        let x = psi.forward(Vec2::new(0.3, 0.6));
        let image = zero.evaluate_curved(&[x]).unwrap()[0];
        assert!((image - x).norm() < 1e-10);

        // Closed-form composition for affine Psi.
        let image = model.evaluate_curved(&[x]).unwrap()[0];
        let binv = b.try_inverse().unwrap();
        let xi = binv * (x - c);
        let np = xi + Vec2::new(0.4 * xi.x * (1.0 - xi.x), 0.0);
        let expect = b * np + c;
        assert!((image - expect).norm() < 1e-13);

        // Boundary points of the curved domain stay on the boundary.
        let bx = psi.forward(Vec2::new(0.0, 0.4));
        let bi = model.evaluate_curved(&[bx]).unwrap()[0];
        let xi_back = psi.inverse(bi);
        assert!(xi_back.x.abs() < 1e-8);
    }

    #[test]
    fn penalty_zero_on_feasible_and_positive_on_folds() {
        let sq = PolygonalDomain::unit_square();
        let tri = Triangulation::structured_rectangle(&sq, 6, 6).unwrap();
        let quad = tri.quadrature(3).unwrap();
        let penalty = JacobianPenalty::new(0.01, quad).unwrap();

        let (v0, g0) = penalty.value_and_gradient(&bubble_x_model(0.0));
        assert_eq!(v0, 0.0);
        assert_eq!(g0.amax(), 0.0);

        let (v2, _) = penalty.value_and_gradient(&bubble_x_model(2.0));
        assert!(v2 > 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_difference() {
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let n = basis.len();
        let coeffs = DVector::from_fn(n, |i, _| 0.35 * ((i as f64) * 0.9 - 0.5).cos());
        let model = DisplacementModel::new(basis, coeffs.clone(), sq.clone(), None).unwrap();
        let tri = Triangulation::structured_rectangle(&sq, 5, 5).unwrap();
        let penalty = JacobianPenalty::new(0.8, tri.quadrature(3).unwrap()).unwrap();
        let (_, grad) = penalty.value_and_gradient(&model);

        let h = 1e-6;
        for k in 0..n {
            let mut ap = coeffs.clone();
            ap[k] += h;
            let mut am = coeffs.clone();
            am[k] -= h;
            let (vp, _) = penalty.value_and_gradient(&model.with_coefficients(ap).unwrap());
            let (vm, _) = penalty.value_and_gradient(&model.with_coefficients(am).unwrap());
            let fd = (vp - vm) / (2.0 * h);
            assert_relative_eq!(grad[k], fd, epsilon = 1e-9, max_relative = 1e-6);
        }
    }

    #[test]
    fn target_gradient_pointwise_hand_formula() {
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let n = basis.len();
        let coeffs = DVector::from_fn(n, |i, _| 0.05 * (i as f64 + 1.0));
        let model = DisplacementModel::new(basis.clone(), coeffs, sq.clone(), None).unwrap();
        let sources = vec![Vec2::new(0.3, 0.4), Vec2::new(0.6, 0.7)];
        let targets = vec![Vec2::new(0.35, 0.45), Vec2::new(0.55, 0.65)];
        let target = Target::Pointwise(
            PointwiseTarget::uniform(sources.clone(), targets, WeightMode::RowStochastic)
                .unwrap(),
        );
        let grad = cm_target_gradient(&model, &target).unwrap();

        let images = model.evaluate(&sources).unwrap();
        let bary = match &target {
            Target::Pointwise(t) => t.barycenters(),
            _ => unreachable!(),
        };
        for k in 0..n {
            let mut expect = 0.0;
            for (i, &xi) in sources.iter().enumerate() {
                expect += (images[i] - bary[i]).dot(&basis.eval(k, xi, 0.0));
            }
            assert_relative_eq!(grad[k], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn curved_target_gradient_matches_finite_difference() {
        // Gradient through a nontrivial Psi: the coefficient derivative
        // picks up the forward Jacobian of the curved map.
        let sq = PolygonalDomain::unit_square();
        let basis: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let n = basis.len();
        let psi = CurvedMap::parabolic_shear(0.3);
        let coeffs = DVector::from_fn(n, |i, _| 0.03 * ((i as f64) - 2.0).cos());
        let model = DisplacementModel::new(
            basis,
            coeffs.clone(),
            sq.clone(),
            Some(psi.clone()),
        )
        .unwrap();
        // Sample points in the curved domain: images of interior points.
        let sources: Vec<Vec2> = [(0.3, 0.4), (0.6, 0.7), (0.8, 0.2)]
            .iter()
            .map(|&(x, y)| psi.forward(Vec2::new(x, y)))
            .collect();
        let targets: Vec<Vec2> = sources.iter().map(|&p| p + Vec2::new(0.02, 0.01)).collect();
        let target = Target::Pointwise(
            PointwiseTarget::uniform(sources.clone(), targets, WeightMode::RowStochastic)
                .unwrap(),
        );
        let grad = cm_target_gradient(&model, &target).unwrap();

        let h = 1e-6;
        let objective = |a: &DVector<f64>| -> f64 {
            let m = model.with_coefficients(a.clone()).unwrap();
            let images = m.evaluate_curved(&sources).unwrap();
            target.eval(&images).unwrap()
        };
        for k in 0..n {
            let mut ap = coeffs.clone();
            ap[k] += h;
            let mut am = coeffs.clone();
            am[k] -= h;
            let fd = (objective(&ap) - objective(&am)) / (2.0 * h);
            assert_relative_eq!(grad[k], fd, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn bijectivity_verdicts_for_analytic_family() {
        let fine = 100;
        let check = |eps: f64| bijectivity_check(&bubble_x_model(eps), fine, &[], 1e-6);
        match check(0.5) {
            BijectivityVerdict::Bijective { min_jacobian } => {
                assert_relative_eq!(min_jacobian, 0.5, epsilon = 1e-9);
            }
            other => panic!("expected bijective, got {other:?}"),
        }
        match check(2.0) {
            BijectivityVerdict::Violated {
                min_jacobian,
                location,
            } => {
                assert_relative_eq!(min_jacobian, -1.0, epsilon = 1e-9);
                assert!(location.x > 0.95, "certificate near x1 = 1, got {location:?}");
            }
            other => panic!("expected violated, got {other:?}"),
        }
        assert!(check(0.0).is_bijective());
    }

    #[test]
    fn fold_detector_finds_opposite_signed_cells() {
        assert!(detect_fold(&bubble_x_model(2.0), 100).is_some());
        assert!(detect_fold(&bubble_x_model(0.5), 100).is_none());
    }

    #[test]
    fn grid_images_pairwise_distinct_when_bijective() {
        let model = bubble_x_model(0.5);
        let n = 100;
        let mut images = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                images.push(
                    model.map_polytope_point(Vec2::new(i as f64 / n as f64, j as f64 / n as f64)),
                );
            }
        }
        // Injectivity proxy along grid rows: x-images strictly increase.
        for j in 0..=n {
            for i in 0..n {
                let a = images[i * (n + 1) + j];
                let b = images[(i + 1) * (n + 1) + j];
                assert!(b.x > a.x);
            }
        }
    }
}
