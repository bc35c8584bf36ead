//! The `check` subcommand: measures the numerical properties the library
//! is built on (identity, round-trip, Jacobian consistency, gradient
//! agreement, continuity bound) and reports each value against its
//! tolerance as JSON. Any failure exits with code 3.

use crate::config::build_geometry;
use crate::{CliError, RunContext};
use flowmorph::basis::{tensorize_time, BasisRef, TangentialPolyBasis};
use flowmorph::compositional::{DisplacementModel, JacobianPenalty};
use flowmorph::fields::GaussianBump;
use flowmorph::geometry::PolygonalDomain;
use flowmorph::io::fmt_g17;
use flowmorph::targets::{DistributedTarget, PointwiseTarget, Target, WeightMode};
use flowmorph::vectorflow::{
    adjoint_gradient_distributed, adjoint_gradient_pointwise, continuity_gap, integrate_flow,
    integrate_flow_gradient, inverse_map, FlowParams, VelocityModel,
};
use flowmorph::Vec2;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

struct CheckOutcome {
    name: &'static str,
    measured: f64,
    tolerance: f64,
    pass: bool,
}

fn leq(name: &'static str, measured: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        measured,
        tolerance,
        pass: measured <= tolerance,
    }
}

fn grid(domain: &PolygonalDomain, n: usize) -> Vec<Vec2> {
    crate::register::sample_grid(domain, n)
}

pub fn run(ctx: &RunContext) -> Result<(), CliError> {
    let geometry = build_geometry(&ctx.config.domain)?;
    let domain = &geometry.domain;
    let steps = ctx.config.check.steps;
    let params = FlowParams::new(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);

    let spatial: BasisRef = Arc::new(
        TangentialPolyBasis::new(domain, ctx.config.map.degree).map_err(CliError::numerical)?,
    );
    let st: BasisRef = Arc::new(
        tensorize_time(spatial.clone(), ctx.config.map.temporal_degree)
            .map_err(CliError::numerical)?,
    );
    let random_model = |scale: f64, rng: &mut ChaCha8Rng| -> VelocityModel {
        let coeffs = DVector::from_fn(st.len(), |_, _| rng.random_range(-scale..scale));
        VelocityModel::new(st.clone(), coeffs).expect("matching dimensions")
    };

    let seeds = grid(domain, ctx.config.check.grid);
    let mut checks: Vec<CheckOutcome> = Vec::new();

    // Identity at zero coefficients, any step count.
    let zero = VelocityModel::zero(st.clone());
    let sol = integrate_flow(&zero, domain, &seeds, FlowParams::new(3))
        .map_err(CliError::numerical)?;
    let identity_gap = sol
        .endpoints()
        .iter()
        .zip(&seeds)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    checks.push(leq("flow_identity", identity_gap, 1e-14));

    // Flow round-trip through the reversed field.
    let model = random_model(0.3, &mut rng);
    let forward = integrate_flow(&model, domain, &seeds, params)
        .map_err(CliError::numerical)?
        .endpoints();
    let back = inverse_map(&model, domain, &forward, params).map_err(CliError::numerical)?;
    let round_trip = back
        .iter()
        .zip(&seeds)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    checks.push(leq("flow_round_trip", round_trip, 1e-6));

    // Jacobian determinant vs the exponential of the divergence integral.
    let sol = integrate_flow_gradient(&model, domain, &seeds, params)
        .map_err(CliError::numerical)?;
    let grads = sol.endpoint_gradients().expect("gradients");
    let logjs = sol.endpoint_log_jacobians().expect("logJ");
    let jac_gap = grads
        .iter()
        .zip(&logjs)
        .map(|(g, &l)| {
            let expj = l.exp();
            ((g.determinant() - expj) / expj).abs()
        })
        .fold(0.0, f64::max);
    checks.push(leq("jacobian_consistency", jac_gap, 1e-6));

    // Adjoint gradients vs central finite differences (both targets).
    let sources = grid(domain, 3);
    let warped: Vec<Vec2> = sources
        .iter()
        .map(|&p| p + Vec2::new(0.03, -0.02))
        .collect();
    let pw = PointwiseTarget::uniform(sources.clone(), warped, WeightMode::RowStochastic)
        .map_err(CliError::numerical)?;
    let small = random_model(0.2, &mut rng);
    checks.push(leq(
        "gradient_pointwise_vs_fd",
        gradient_gap_pointwise(&small, domain, &pw, params)?,
        1e-4,
    ));

    let quad = geometry
        .triangulation
        .quadrature(2)
        .map_err(CliError::numerical)?;
    let (lo, hi) = domain.bounding_box();
    let dt = DistributedTarget::new(
        Arc::new(GaussianBump {
            center: (lo + hi) * 0.5,
            width: 0.25 * domain.diameter(),
            amplitude: 1.0,
        }),
        vec![Arc::new(|_x| 1.0)],
        quad,
    )
    .map_err(CliError::numerical)?;
    checks.push(leq(
        "gradient_distributed_vs_fd",
        gradient_gap_distributed(&small, domain, &dt, params)?,
        1e-4,
    ));

    // Compositional gradients (target and penalty) vs finite differences.
    checks.push(leq(
        "cm_gradient_vs_fd",
        cm_gradient_gap(domain, &geometry, &spatial, &pw)?,
        1e-6,
    ));

    // Continuity-in-data bound on random field pairs.
    let mut continuity_margin: f64 = f64::NEG_INFINITY;
    for _ in 0..ctx.config.check.continuity_pairs {
        let v = random_model(0.3, &mut rng);
        let w = random_model(0.3, &mut rng);
        let report = continuity_gap(&v, &w, domain, &seeds, params, 25)
            .map_err(CliError::numerical)?;
        continuity_margin = continuity_margin.max(report.lhs - report.rhs);
    }
    checks.push(leq("continuity_bound_margin", continuity_margin, 1e-6));

    // Report.
    let mut body = String::from("{\n  \"checks\": [\n");
    for (i, c) in checks.iter().enumerate() {
        body.push_str(&format!(
            "    {{\"name\": \"{}\", \"measured\": {}, \"tolerance\": {}, \"pass\": {}}}{}\n",
            c.name,
            fmt_g17(c.measured),
            fmt_g17(c.tolerance),
            c.pass,
            if i + 1 < checks.len() { "," } else { "" }
        ));
    }
    let all_pass = checks.iter().all(|c| c.pass);
    body.push_str(&format!("  ],\n  \"all_pass\": {all_pass}\n}}\n"));
    std::fs::write(ctx.out_dir.join("check.json"), &body)?;
    print!("{body}");

    if all_pass {
        Ok(())
    } else {
        let failed: Vec<&str> = checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect();
        Err(CliError::ChecksFailed(failed.join(", ")))
    }
}

fn gradient_gap_pointwise(
    model: &VelocityModel,
    domain: &PolygonalDomain,
    target: &PointwiseTarget,
    params: FlowParams,
) -> Result<f64, CliError> {
    let grad =
        adjoint_gradient_pointwise(model, domain, target, params).map_err(CliError::numerical)?;
    let objective = |a: &DVector<f64>| -> Result<f64, CliError> {
        let m = model.with_coefficients(a.clone()).map_err(CliError::numerical)?;
        let sol =
            integrate_flow(&m, domain, target.sources(), params).map_err(CliError::numerical)?;
        target.eval(&sol.endpoints()).map_err(CliError::numerical)
    };
    relative_fd_gap(&grad, model.coefficients(), objective)
}

fn gradient_gap_distributed(
    model: &VelocityModel,
    domain: &PolygonalDomain,
    target: &DistributedTarget,
    params: FlowParams,
) -> Result<f64, CliError> {
    let grad = adjoint_gradient_distributed(model, domain, target, params)
        .map_err(CliError::numerical)?;
    let points = target.sample_points();
    let objective = |a: &DVector<f64>| -> Result<f64, CliError> {
        let m = model.with_coefficients(a.clone()).map_err(CliError::numerical)?;
        let sol = integrate_flow(&m, domain, &points, params).map_err(CliError::numerical)?;
        target.eval(&sol.endpoints()).map_err(CliError::numerical)
    };
    relative_fd_gap(&grad, model.coefficients(), objective)
}

fn cm_gradient_gap(
    domain: &PolygonalDomain,
    geometry: &crate::config::Geometry,
    spatial: &BasisRef,
    pw: &PointwiseTarget,
) -> Result<f64, CliError> {
    let coeffs = DVector::from_fn(spatial.len(), |i, _| 0.04 * ((i + 1) as f64).sin());
    let model = DisplacementModel::new(spatial.clone(), coeffs.clone(), domain.clone(), None)
        .map_err(CliError::numerical)?;
    let target = Target::Pointwise(pw.clone());
    let quad = geometry
        .triangulation
        .quadrature(3)
        .map_err(CliError::numerical)?;
    let penalty = JacobianPenalty::new(0.9, quad).map_err(CliError::numerical)?;

    let grad_t =
        flowmorph::compositional::cm_target_gradient(&model, &target).map_err(CliError::numerical)?;
    let (_, grad_p) = penalty.value_and_gradient(&model);
    let grad = &grad_t + &grad_p;
    let objective = |a: &DVector<f64>| -> Result<f64, CliError> {
        let m = model.with_coefficients(a.clone()).map_err(CliError::numerical)?;
        let images = m.evaluate(&target.sample_points()).map_err(CliError::numerical)?;
        let (pen, _) = penalty.value_and_gradient(&m);
        Ok(target.eval(&images).map_err(CliError::numerical)? + pen)
    };
    relative_fd_gap(&grad, &coeffs, objective)
}

fn relative_fd_gap<F>(
    grad: &DVector<f64>,
    at: &DVector<f64>,
    objective: F,
) -> Result<f64, CliError>
where
    F: Fn(&DVector<f64>) -> Result<f64, CliError>,
{
    let h = 1e-5;
    let scale = grad.amax().max(1e-8);
    let mut worst: f64 = 0.0;
    for i in 0..at.len() {
        let mut ap = at.clone();
        ap[i] += h;
        let mut am = at.clone();
        am[i] -= h;
        let fd = (objective(&ap)? - objective(&am)?) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / scale);
    }
    Ok(worst)
}
