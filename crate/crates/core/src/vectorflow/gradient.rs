//! Coefficient sensitivities and adjoint gradients of vector-flow maps.
//!
//! The direct route integrates the state-transition formula
//! `dN/da_i = grad X(1) int_0^1 (grad X(tau))^-1 phi_i(X(tau), tau) dtau`;
//! the adjoint route integrates one backward linear ODE per seed with the
//! target derivative as terminal condition. Both are discretized on the
//! forward step grid (composite trapezoid in time), so gradients are
//! consistent with the continuous ones in the step-refinement limit.

use super::integrate::{integrate_flow, integrate_flow_gradient};
use super::{FlowParams, Scheme, VelocityField, VelocityModel};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::PolygonalDomain;
use crate::targets::{DistributedTarget, PointwiseTarget};
use crate::{Mat2, Vec2};
use nalgebra::DVector;

/// Inverse of a 2x2 flow gradient using its determinant from the
/// co-integrated log-Jacobian (always positive, hence always invertible).
fn invert_gradient(g: &Mat2, logj: f64) -> Result<Mat2> {
    let det = logj.exp();
    if !det.is_finite() || det < 1e-300 {
        return Err(Error::Conditioning(format!(
            "flow gradient determinant exp({logj}) is not usable"
        )));
    }
    let inv_det = 1.0 / det;
    Ok(Mat2::new(
        g[(1, 1)] * inv_det,
        -g[(0, 1)] * inv_det,
        -g[(1, 0)] * inv_det,
        g[(0, 0)] * inv_det,
    ))
}

/// Trapezoid weights on the uniform grid with `k + 1` nodes.
fn trapezoid_weights(k: usize) -> Vec<f64> {
    let h = 1.0 / k as f64;
    (0..=k)
        .map(|i| if i == 0 || i == k { 0.5 * h } else { h })
        .collect()
}

/// Derivatives of the flow map with respect to every coefficient,
/// per seed: `out[seed][member]` is `dN/da_member (seed)`.
pub fn coefficient_sensitivity(
    model: &VelocityModel,
    domain: &PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
) -> Result<Vec<Vec<Vec2>>> {
    let sol = integrate_flow_gradient(model, domain, seeds, params)?;
    let grads = sol.gradients.as_ref().expect("gradients integrated");
    let logjs = sol.log_jacobian.as_ref().expect("logJ integrated");
    let weights = trapezoid_weights(params.steps);
    let m = model.len();

    let indices: Vec<usize> = (0..seeds.len()).collect();
    exec::try_map_collect(&indices, |&s| {
        let traj = &sol.positions[s];
        let gtraj = &grads[s];
        let ltraj = &logjs[s];
        let g_final = *gtraj.last().unwrap();
        let mut integrals = vec![Vec2::zeros(); m];
        for (k, (&w, &t)) in weights.iter().zip(sol.times.iter()).enumerate() {
            let g_inv = invert_gradient(&gtraj[k], ltraj[k])?;
            for (i, acc) in integrals.iter_mut().enumerate() {
                *acc += g_inv * model.basis_eval(i, traj[k], t) * w;
            }
        }
        Ok(integrals.into_iter().map(|v| g_final * v).collect())
    })
}

/// Backward adjoint pass for one seed. Integrates the reversed coupled
/// system (position + adjoint) from the stored endpoint, then contracts
/// the adjoint with every basis member along the stored forward trajectory.
fn adjoint_contribution(
    model: &VelocityModel,
    forward: &[Vec2],
    times: &[f64],
    terminal: Vec2,
    weights: &[f64],
    scheme: Scheme,
) -> DVector<f64> {
    let k = times.len() - 1;
    let h = 1.0 / k as f64;

    // Reversed variables: y(s) = X(1 - s), mu(s) = Lambda(1 - s), with
    // dy/ds = -v(y, 1-s) and dmu/ds = +grad_v(y, 1-s)^T mu.
    let rhs = |y: Vec2, mu: Vec2, s: f64| -> (Vec2, Vec2) {
        let t = 1.0 - s;
        (
            -model.velocity(y, t),
            model.gradient(y, t).transpose() * mu,
        )
    };

    let mut y = *forward.last().unwrap();
    let mut mu = terminal;
    let mut lambda_rev = Vec::with_capacity(k + 1);
    lambda_rev.push(mu);
    for j in 0..k {
        let s = j as f64 * h;
        match scheme {
            Scheme::Rk2 => {
                let (ky1, km1) = rhs(y, mu, s);
                let (ky2, km2) = rhs(y + ky1 * (0.5 * h), mu + km1 * (0.5 * h), s + 0.5 * h);
                y += ky2 * h;
                mu += km2 * h;
            }
            Scheme::Rk4 => {
                let (ky1, km1) = rhs(y, mu, s);
                let (ky2, km2) = rhs(y + ky1 * (0.5 * h), mu + km1 * (0.5 * h), s + 0.5 * h);
                let (ky3, km3) = rhs(y + ky2 * (0.5 * h), mu + km2 * (0.5 * h), s + 0.5 * h);
                let (ky4, km4) = rhs(y + ky3 * h, mu + km3 * h, s + h);
                y += (ky1 + ky2 * 2.0 + ky3 * 2.0 + ky4) * (h / 6.0);
                mu += (km1 + km2 * 2.0 + km3 * 2.0 + km4) * (h / 6.0);
            }
        }
        lambda_rev.push(mu);
    }

    // Lambda(t_k) = mu(s = 1 - t_k): reversed index K - k.
    let m = model.len();
    let mut contribution = DVector::zeros(m);
    for (node, (&w, &t)) in weights.iter().zip(times.iter()).enumerate() {
        let lambda = lambda_rev[k - node];
        let x = forward[node];
        for i in 0..m {
            contribution[i] += w * lambda.dot(&model.basis_eval(i, x, t));
        }
    }
    contribution
}

/// Gradient of the pointwise objective by the adjoint method: one forward
/// trajectory and one backward adjoint ODE per control point.
pub fn adjoint_gradient_pointwise(
    model: &VelocityModel,
    domain: &PolygonalDomain,
    target: &PointwiseTarget,
    params: FlowParams,
) -> Result<DVector<f64>> {
    let seeds = target.sources().to_vec();
    let sol = integrate_flow(model, domain, &seeds, params)?;
    let terminals = target.terminal_adjoint(&sol.endpoints())?;
    let weights = trapezoid_weights(params.steps);

    let indices: Vec<usize> = (0..seeds.len()).collect();
    let contributions = exec::map_collect(&indices, |&i| {
        adjoint_contribution(
            model,
            &sol.positions[i],
            &sol.times,
            terminals[i],
            &weights,
            params.scheme,
        )
    });
    let mut grad = DVector::zeros(model.len());
    for c in contributions {
        grad += c;
    }
    Ok(grad)
}

/// Gradient of the distributed objective by the adjoint method: forward
/// trajectories from every quadrature node, terminal condition from the
/// projected residual, and a quadrature-weighted sum of per-node adjoint
/// contractions.
pub fn adjoint_gradient_distributed(
    model: &VelocityModel,
    domain: &PolygonalDomain,
    target: &DistributedTarget,
    params: FlowParams,
) -> Result<DVector<f64>> {
    let seeds = target.sample_points();
    let sol = integrate_flow(model, domain, &seeds, params)?;
    let terminals = target.terminal_adjoint(&sol.endpoints())?;
    let weights = trapezoid_weights(params.steps);

    let indices: Vec<usize> = (0..seeds.len()).collect();
    let contributions = exec::map_collect(&indices, |&i| {
        adjoint_contribution(
            model,
            &sol.positions[i],
            &sol.times,
            terminals[i],
            &weights,
            params.scheme,
        )
    });
    let mut grad = DVector::zeros(model.len());
    for (c, q) in contributions.iter().zip(target.quadrature()) {
        grad += c * q.weight;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::basis::{tensorize_time, BasisRef, TangentialPolyBasis};
    use crate::fields::GaussianBump;
    use crate::geometry::{PolygonalDomain, Triangulation};
    use crate::targets::WeightMode;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn sensitivity_at_zero_is_time_integral_of_basis() {
        // At a = 0 the flow is the identity and grad X = I, so the
        // sensitivity reduces to the time integral of each member. For a
        // time-constant basis that is the member value itself.
        let sq = PolygonalDomain::unit_square();
        let model = VelocityModel::zero(logistic_basis(&sq));
        let seed = Vec2::new(0.4, 0.7);
        let sens = coefficient_sensitivity(&model, &sq, &[seed], FlowParams::new(50)).unwrap();
        let phi = model.basis_eval(0, seed, 0.0);
        assert_relative_eq!(sens[0][0].x, phi.x, epsilon = 1e-12);
        assert_relative_eq!(sens[0][0].y, phi.y, epsilon = 1e-12);
    }

    #[test]
    fn sensitivity_matches_finite_difference_on_logistic_field() {
        let sq = PolygonalDomain::unit_square();
        let model = logistic_model(&sq);
        let seed = Vec2::new(0.35, 0.6);
        let params = FlowParams::new(1000);
        let sens = coefficient_sensitivity(&model, &sq, &[seed], params).unwrap();

        let h = 1e-5;
        let eval = |a: f64| -> Vec2 {
            let m = model
                .with_coefficients(nalgebra::DVector::from_vec(vec![a]))
                .unwrap();
            integrate_flow(&m, &sq, &[seed], params).unwrap().endpoint(0)
        };
        let fd = (eval(1.0 + h) - eval(1.0 - h)) / (2.0 * h);
        assert_relative_eq!(sens[0][0].x, fd.x, epsilon = 1e-10, max_relative = 1e-6);
        assert_relative_eq!(sens[0][0].y, fd.y, epsilon = 1e-10, max_relative = 1e-6);
    }

    fn richer_model(sq: &PolygonalDomain) -> VelocityModel {
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(sq, 1).unwrap());
        let st: BasisRef = Arc::new(tensorize_time(spatial, 1).unwrap());
        let m = st.len();
        let coeffs = nalgebra::DVector::from_fn(m, |i, _| {
            0.15 * ((i as f64 * 0.7).sin() + 0.3)
        });
        VelocityModel::new(st, coeffs).unwrap()
    }

    #[test]
    fn pointwise_adjoint_matches_finite_difference() {
        let sq = PolygonalDomain::unit_square();
        let model = richer_model(&sq);
        let sources: Vec<Vec2> = interior_grid(3);
        let targets: Vec<Vec2> = sources
            .iter()
            .map(|&p| p + Vec2::new(0.05, -0.03))
            .collect();
        let target =
            PointwiseTarget::uniform(sources, targets, WeightMode::RowStochastic).unwrap();
        let params = FlowParams::new(400);
        let grad = adjoint_gradient_pointwise(&model, &sq, &target, params).unwrap();

        let h = 1e-5;
        let objective = |coeffs: &nalgebra::DVector<f64>| -> f64 {
            let m = model.with_coefficients(coeffs.clone()).unwrap();
            let sol = integrate_flow(&m, &sq, target.sources(), params).unwrap();
            target.eval(&sol.endpoints()).unwrap()
        };
        let a0 = model.coefficients().clone();
        for i in 0..model.len() {
            let mut ap = a0.clone();
            ap[i] += h;
            let mut am = a0.clone();
            am[i] -= h;
            let fd = (objective(&ap) - objective(&am)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-8, max_relative = 2e-4);
        }
    }

    #[test]
    fn pointwise_adjoint_zero_at_barycenters() {
        // If the images already sit at the weighted barycenters the
        // terminal adjoint vanishes and so does the gradient.
        let sq = PolygonalDomain::unit_square();
        let model = VelocityModel::zero(logistic_basis(&sq));
        let sources = vec![Vec2::new(0.3, 0.4), Vec2::new(0.7, 0.6)];
        // With identity flow the images are the sources; pick targets whose
        // barycenters equal the sources.
        let target = PointwiseTarget::uniform(
            sources.clone(),
            sources.clone(),
            WeightMode::RowStochastic,
        )
        .unwrap();
        let grad =
            adjoint_gradient_pointwise(&model, &sq, &target, FlowParams::new(50)).unwrap();
        assert!(grad.amax() < 1e-14);
    }

    #[test]
    fn pointwise_adjoint_identity_flow_hand_formula() {
        // a = 0, time-constant basis: grad_k = sum_i (xi_i - b_i) . phi_k(xi_i).
        let sq = PolygonalDomain::unit_square();
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let model = VelocityModel::zero(spatial.clone());
        let sources = vec![Vec2::new(0.25, 0.5), Vec2::new(0.6, 0.3)];
        let targets = vec![Vec2::new(0.3, 0.55), Vec2::new(0.55, 0.35)];
        let target = PointwiseTarget::uniform(
            sources.clone(),
            targets.clone(),
            WeightMode::RowStochastic,
        )
        .unwrap();
        let grad =
            adjoint_gradient_pointwise(&model, &sq, &target, FlowParams::new(200)).unwrap();
        let bary = target.barycenters();
        for k in 0..spatial.len() {
            let mut expect = 0.0;
            for (i, &xi) in sources.iter().enumerate() {
                expect += (xi - bary[i]).dot(&spatial.eval(k, xi, 0.0));
            }
            assert_relative_eq!(grad[k], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn distributed_adjoint_matches_finite_difference() {
        let sq = PolygonalDomain::unit_square();
        let model = richer_model(&sq);
        let tri = Triangulation::structured_rectangle(&sq, 4, 4).unwrap();
        let quad = tri.quadrature(3).unwrap();
        let target = DistributedTarget::new(
            Arc::new(GaussianBump {
                center: Vec2::new(0.45, 0.55),
                width: 0.25,
                amplitude: 1.0,
            }),
            vec![Arc::new(|_x| 1.0)],
            quad,
        )
        .unwrap();
        let params = FlowParams::new(300);
        let grad = adjoint_gradient_distributed(&model, &sq, &target, params).unwrap();

        let h = 1e-5;
        let objective = |coeffs: &nalgebra::DVector<f64>| -> f64 {
            let m = model.with_coefficients(coeffs.clone()).unwrap();
            let sol = integrate_flow(&m, &sq, &target.sample_points(), params).unwrap();
            target.eval(&sol.endpoints()).unwrap()
        };
        let a0 = model.coefficients().clone();
        let scale = grad.amax();
        for i in 0..model.len() {
            let mut ap = a0.clone();
            ap[i] += h;
            let mut am = a0.clone();
            am[i] -= h;
            let fd = (objective(&ap) - objective(&am)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 2e-4 * scale.max(1e-3),
                "member {i}: adjoint {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn distributed_adjoint_identity_flow_hand_formula() {
        // a = 0 with Z_N = {0}: the gradient reduces to the quadrature of
        // u(xi) grad_u(xi) . phi_k(xi) (time integral of a time-constant
        // basis is the member itself).
        let sq = PolygonalDomain::unit_square();
        let spatial: BasisRef = Arc::new(TangentialPolyBasis::new(&sq, 1).unwrap());
        let model = VelocityModel::zero(spatial.clone());
        let tri = Triangulation::structured_rectangle(&sq, 4, 4).unwrap();
        let quad = tri.quadrature(3).unwrap();
        let field = GaussianBump {
            center: Vec2::new(0.5, 0.45),
            width: 0.3,
            amplitude: 1.2,
        };
        let target =
            DistributedTarget::new(Arc::new(field), vec![], quad.clone()).unwrap();
        let grad =
            adjoint_gradient_distributed(&model, &sq, &target, FlowParams::new(100)).unwrap();
        use crate::fields::ScalarField;
        for k in 0..spatial.len() {
            let expect: f64 = quad
                .iter()
                .map(|q| {
                    q.weight
                        * field.value(q.point)
                        * field.gradient(q.point).dot(&spatial.eval(k, q.point, 0.0))
                })
                .sum();
            assert_relative_eq!(grad[k], expect, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn distributed_adjoint_zero_for_constant_field() {
        use crate::fields::Constant;
        let sq = PolygonalDomain::unit_square();
        let model = richer_model(&sq);
        let tri = Triangulation::structured_rectangle(&sq, 3, 3).unwrap();
        let target = DistributedTarget::new(
            Arc::new(Constant(2.0)),
            vec![Arc::new(|_x| 1.0)],
            tri.quadrature(2).unwrap(),
        )
        .unwrap();
        let grad =
            adjoint_gradient_distributed(&model, &sq, &target, FlowParams::new(100)).unwrap();
        assert!(grad.amax() < 1e-14);
    }

    #[test]
    fn direct_and_adjoint_routes_agree() {
        // Contract the direct sensitivities with the pointwise Frechet
        // derivative and compare against the adjoint-assembled gradient.
        let sq = PolygonalDomain::unit_square();
        let model = richer_model(&sq);
        let sources: Vec<Vec2> = interior_grid(3);
        let shifted: Vec<Vec2> = sources
            .iter()
            .map(|&p| p + Vec2::new(0.04, 0.02))
            .collect();
        let target =
            PointwiseTarget::uniform(sources.clone(), shifted, WeightMode::RowStochastic)
                .unwrap();
        let params = FlowParams::new(600);
        let adjoint = adjoint_gradient_pointwise(&model, &sq, &target, params).unwrap();
        let sens = coefficient_sensitivity(&model, &sq, &sources, params).unwrap();
        let sol = integrate_flow(&model, &sq, &sources, params).unwrap();
        let images = sol.endpoints();
        let mut direct = nalgebra::DVector::zeros(model.len());
        for k in 0..model.len() {
            let h: Vec<Vec2> = (0..sources.len()).map(|s| sens[s][k]).collect();
            direct[k] = target.frechet(&images, &h).unwrap();
        }
        let scale = adjoint.amax();
        for k in 0..model.len() {
            assert!(
                (adjoint[k] - direct[k]).abs() <= 1e-6 * scale.max(1e-9),
                "member {k}: adjoint {} vs direct {}",
                adjoint[k],
                direct[k]
            );
        }
    }
}
