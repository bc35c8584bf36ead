//! The `flow-eval` subcommand: integrate the flow for given coefficients
//! and dump the trajectories (with log-Jacobians) as CSV.

use crate::config::build_geometry;
use crate::register::sample_grid;
use crate::{CliError, RunContext};
use flowmorph::basis::{tensorize_time, BasisRef, TangentialPolyBasis};
use flowmorph::vectorflow::{jacobian_logdet, FlowParams, Scheme, VelocityModel};
use nalgebra::DVector;
use std::sync::Arc;

pub fn run(ctx: &RunContext) -> Result<(), CliError> {
    let spec = ctx.config.flow_eval.clone().unwrap_or(crate::config::FlowEvalSpec {
        coefficients: None,
        coefficients_file: None,
        grid: 10,
    });
    let geometry = build_geometry(&ctx.config.domain)?;
    let spatial: BasisRef = Arc::new(
        TangentialPolyBasis::new(&geometry.domain, ctx.config.map.degree)
            .map_err(CliError::numerical)?,
    );
    let basis: BasisRef = Arc::new(
        tensorize_time(spatial, ctx.config.map.temporal_degree).map_err(CliError::numerical)?,
    );
    let coefficients = match (&spec.coefficients, &spec.coefficients_file) {
        (Some(values), _) => DVector::from_vec(values.clone()),
        (None, Some(path)) => flowmorph::io::read_vector(path).map_err(CliError::numerical)?,
        (None, None) => DVector::zeros(basis.len()),
    };
    if coefficients.len() != basis.len() {
        return Err(CliError::Validation(format!(
            "flow_eval has {} coefficients, basis dimension is {}",
            coefficients.len(),
            basis.len()
        )));
    }
    let model = VelocityModel::new(basis, coefficients).map_err(CliError::numerical)?;
    let scheme = match ctx.config.map.scheme.as_str() {
        "rk2" => Scheme::Rk2,
        _ => Scheme::Rk4,
    };
    let params = FlowParams::new(ctx.config.map.steps)
        .with_scheme(scheme)
        .with_leak_tol(ctx.config.map.leak_tol);
    let seeds = sample_grid(&geometry.domain, spec.grid);
    let solution =
        jacobian_logdet(&model, &geometry.domain, &seeds, params).map_err(CliError::numerical)?;
    solution
        .write_csv(ctx.out_dir.join("flow.csv"))
        .map_err(CliError::numerical)?;
    Ok(())
}
