//! The `register` subcommand: solve one registration problem and write its
//! artifacts (iteration report, final coefficients, deformed grid, JSON
//! summary).

use crate::config::{build_geometry, build_problem};
use crate::{CliError, RunContext};
use flowmorph::compositional::{bijectivity_check, BIJECTIVITY_MARGIN};
use flowmorph::io::fmt_g17;
use flowmorph::optimizer::{
    minimize_problem, minimize_with_em, EmSchedule, MapModel, Objective,
};
use flowmorph::vectorflow::{jacobian_logdet, VelocityModel};
use flowmorph::Vec2;
use nalgebra::DVector;
use std::path::Path;
use std::time::Instant;

pub fn run(ctx: &RunContext, shift_override: Option<f64>, out_dir: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let geometry = build_geometry(&ctx.config.domain)?;
    let mut built = build_problem(&ctx.config, &geometry, ctx.seed, shift_override)?;
    let a0 = DVector::zeros(built.problem.dimension());

    let report = match (&built.em, &built.problem.target) {
        (Some(em), flowmorph::targets::Target::Pointwise(_)) => {
            let schedule = EmSchedule {
                outer_iters: em.outer_iters,
                sigma0: em.sigma0,
                sigma_min: em
                    .sigma_min
                    .unwrap_or(1e-3 * geometry.domain.diameter()),
            };
            minimize_with_em(&mut built.problem, a0, &built.config, schedule)
                .map_err(CliError::numerical)?
        }
        _ => minimize_problem(&mut built.problem, a0, &built.config)
            .map_err(CliError::numerical)?,
    };

    // Deformed grid of sources and their images.
    let grid = sample_grid(&geometry.domain, 20);
    let images = built
        .problem
        .map
        .map_points(&report.final_coefficients, &grid)
        .map_err(CliError::numerical)?;

    // Bijectivity evidence: the sampled CM verdict, or the minimum flow
    // Jacobian (structurally positive) for vector flows.
    let (min_jacobian, verdict) = match &built.problem.map {
        MapModel::Compositional { template, penalty, .. } => {
            let model = template
                .with_coefficients(report.final_coefficients.clone())
                .map_err(CliError::numerical)?;
            let verdict = bijectivity_check(&model, 100, &penalty.points(), BIJECTIVITY_MARGIN);
            (verdict.min_jacobian(), verdict.tag().to_string())
        }
        MapModel::VectorFlow {
            basis,
            domain,
            params,
        } => {
            let model = VelocityModel::new(basis.clone(), report.final_coefficients.clone())
                .map_err(CliError::numerical)?;
            let seeds = sample_grid(domain, 12);
            let sol = jacobian_logdet(&model, domain, &seeds, *params)
                .map_err(CliError::numerical)?;
            let min_j = sol
                .endpoint_log_jacobians()
                .expect("logJ integrated")
                .iter()
                .map(|l| l.exp())
                .fold(f64::INFINITY, f64::min);
            let tag = if min_j > 0.0 { "bijective" } else { "violated" };
            (min_j, tag.to_string())
        }
    };
    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    flowmorph::io::write_vector(
        out_dir.join("coefficients.txt"),
        &report.final_coefficients,
    )
    .map_err(CliError::numerical)?;
    std::fs::write(
        out_dir.join("deformed_grid.csv"),
        flowmorph::io::deformed_points_to_csv(&grid, &images),
    )?;

    let wall_time = start.elapsed().as_secs_f64();
    let summary = format!(
        "{{\n  \"initial_objective\": {},\n  \"final_objective\": {},\n  \"min_jacobian\": {},\n  \"bijectivity_verdict\": \"{}\",\n  \"wall_time\": {}\n}}\n",
        fmt_g17(report.initial_objective()),
        fmt_g17(report.final_objective),
        fmt_g17(min_jacobian),
        verdict,
        fmt_g17(wall_time)
    );
    std::fs::write(out_dir.join("summary.json"), summary)?;
    Ok(())
}

/// Interior-inclusive grid over the domain bounding box, filtered to the
/// domain closure.
pub fn sample_grid(domain: &flowmorph::geometry::PolygonalDomain, n: usize) -> Vec<Vec2> {
    let (lo, hi) = domain.bounding_box();
    let mut points = Vec::new();
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
    points
}
