//! The `modal` subcommand: generate coefficient snapshots, build reduced
//! bases per metric form, and write `m, E_proj, E_obj` sweeps alongside the
//! persisted bases.

use crate::config::{build_geometry, build_problem, parse_form, Geometry};
use crate::{CliError, RunContext};
use flowmorph::basis::{assemble_gram, BasisRef, GramForm, TangentialPolyBasis};
use flowmorph::modal::{
    build_gfem_basis, objective_error_sweep, projection_error_sweep, solve_generalized_eig,
    sweep_csv, GfemSources,
};
use flowmorph::optimizer::{minimize_problem, Objective};
use nalgebra::DVector;
use std::sync::Arc;

pub fn run(ctx: &RunContext) -> Result<(), CliError> {
    let modal = ctx
        .config
        .modal
        .as_ref()
        .ok_or_else(|| CliError::Validation("`modal` section missing from config".into()))?
        .clone();
    let geometry = build_geometry(&ctx.config.domain)?;
    let spatial: BasisRef = Arc::new(
        TangentialPolyBasis::new(&geometry.domain, ctx.config.map.degree)
            .map_err(CliError::numerical)?,
    );
    let n = spatial.len();
    if modal.m_max > n {
        return Err(CliError::Validation(format!(
            "modal.m_max = {} exceeds the basis dimension {n}",
            modal.m_max
        )));
    }

    // Snapshots: either registration solutions over a parameter sweep, or
    // coefficient vectors from files.
    let (snapshots, values) = collect_snapshots(ctx, &geometry, n, &modal.snapshots)?;

    let l2 = assemble_gram(
        spatial.as_ref(),
        GramForm::L2,
        &geometry.triangulation,
        modal.quad_order,
    )
    .map_err(CliError::numerical)?;

    for form_tag in &modal.forms {
        let form = parse_form(form_tag).map_err(CliError::numerical)?;
        let operator = assemble_gram(
            spatial.as_ref(),
            form,
            &geometry.triangulation,
            modal.quad_order,
        )
        .map_err(CliError::numerical)?;
        let basis = solve_generalized_eig(&operator, &l2, modal.m_max)
            .map_err(CliError::numerical)?;
        write_sweeps(ctx, &geometry, form_tag, &basis, &snapshots, &values)?;
    }

    if let Some(gfem) = &modal.gfem {
        let form = parse_form(&gfem.operator).map_err(CliError::numerical)?;
        let operator = assemble_gram(
            spatial.as_ref(),
            form,
            &geometry.triangulation,
            modal.quad_order,
        )
        .map_err(CliError::numerical)?;
        let basis = build_gfem_basis(
            &operator,
            &l2,
            spatial.as_ref(),
            &geometry.domain,
            &geometry.triangulation,
            modal.quad_order,
            gfem.degree,
            GfemSources::Both,
        )
        .map_err(CliError::numerical)?;
        let m_cut = basis.modes().min(modal.m_max);
        let basis = basis.truncated(m_cut).map_err(CliError::numerical)?;
        write_sweeps(ctx, &geometry, "gfem", &basis, &snapshots, &values)?;
    }
    Ok(())
}

/// Coefficient snapshots paired with their sweep parameter, when known.
type SnapshotSet = (Vec<DVector<f64>>, Vec<Option<f64>>);

fn collect_snapshots(
    ctx: &RunContext,
    geometry: &Geometry,
    n: usize,
    spec: &crate::config::SnapshotSpec,
) -> Result<SnapshotSet, CliError> {
    match spec.kind.as_str() {
        "files" => {
            let mut snapshots = Vec::new();
            for path in &spec.paths {
                let v = flowmorph::io::read_vector(path).map_err(CliError::numerical)?;
                if v.len() != n {
                    return Err(CliError::Validation(format!(
                        "snapshot {path:?} has {} entries, basis dimension is {n}",
                        v.len()
                    )));
                }
                snapshots.push(v);
            }
            let values = vec![None; snapshots.len()];
            Ok((snapshots, values))
        }
        "register_sweep" => {
            let mut snapshots = Vec::new();
            let mut values = Vec::new();
            for &mu in &spec.values {
                let mut built = build_problem(&ctx.config, geometry, ctx.seed, Some(mu))?;
                let a0 = DVector::zeros(built.problem.dimension());
                let report = minimize_problem(&mut built.problem, a0, &built.config)
                    .map_err(CliError::numerical)?;
                snapshots.push(report.final_coefficients);
                values.push(Some(mu));
            }
            Ok((snapshots, values))
        }
        _ => unreachable!("validated"),
    }
}

fn write_sweeps(
    ctx: &RunContext,
    geometry: &Geometry,
    form_tag: &str,
    basis: &flowmorph::modal::ModalBasis,
    snapshots: &[DVector<f64>],
    values: &[Option<f64>],
) -> Result<(), CliError> {
    let e_proj =
        projection_error_sweep(snapshots, basis).map_err(CliError::numerical)?;

    // Objective sweep: evaluate each snapshot's own registration target at
    // the projected coefficients. File-based snapshots have no attached
    // parameter, so the objective column falls back to the M-norm misfit.
    let e_obj = if values.iter().all(Option::is_some) && ctx.config.target.is_some() {
        let mut problems = Vec::new();
        for mu in values.iter().map(|v| v.expect("checked")) {
            problems.push(build_problem(&ctx.config, geometry, ctx.seed, Some(mu))?);
        }
        objective_error_sweep(snapshots, basis, |s, projected| {
            problems[s].problem.target_value(projected)
        })
        .map_err(CliError::numerical)?
    } else {
        let metric = basis.metric().clone();
        objective_error_sweep(snapshots, basis, |s, projected| {
            let d = projected - &snapshots[s];
            Ok(d.dot(&(&metric * &d)))
        })
        .map_err(CliError::numerical)?
    };

    let ms: Vec<usize> = (0..=basis.modes()).collect();
    std::fs::write(
        ctx.out_dir.join(format!("modal_{form_tag}.csv")),
        sweep_csv(&ms, &e_proj, &e_obj),
    )?;
    basis
        .write_text(ctx.out_dir.join(format!("modal_{form_tag}.txt")))
        .map_err(CliError::numerical)?;
    Ok(())
}
