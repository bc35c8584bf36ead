//! Declarative run configuration: a single JSON document with hard errors
//! on unknown keys, and the builders that turn it into library objects.

use flowmorph::basis::{
    assemble_gram, tensorize_time, BasisRef, GramForm, GramMatrix, TangentialPolyBasis,
};
use flowmorph::compositional::{DisplacementModel, JacobianPenalty};
use flowmorph::fields::{FieldRef, GaussianBump, GaussianRidge, Shifted, SmoothedStep};
use flowmorph::geometry::{CurvedMap, PolygonalDomain, Triangulation};
use flowmorph::optimizer::{MapModel, Metric, MinimizeConfig, RegistrationProblem, Tikhonov};
use flowmorph::targets::{DistributedTarget, PointwiseTarget, ScalarFn, Target, WeightMode};
use flowmorph::vectorflow::{FlowParams, Scheme};
use flowmorph::{Mat2, Vec2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::CliError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub map: MapSpec,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub modal: Option<ModalSpec>,
    #[serde(default)]
    pub flow_eval: Option<FlowEvalSpec>,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// `[a, b, c, d]` for the rectangle `[a,b] x [c,d]`.
    #[serde(default)]
    pub rectangle: Option<[f64; 4]>,
    #[serde(default)]
    pub mesh_file: Option<String>,
    /// Structured mesh cells per direction.
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default)]
    pub curved_map: Option<CurvedMapSpec>,
}

fn default_resolution() -> [usize; 2] {
    [8, 8]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CurvedMapSpec {
    /// `identity`, `affine`, or `parabolic_shear`.
    pub kind: String,
    #[serde(default)]
    pub matrix: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub offset: Option<[f64; 2]>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    /// `vf` or `cm`.
    pub family: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Temporal polynomial degree (vector flows).
    #[serde(default)]
    pub temporal_degree: usize,
    /// Time steps (vector flows).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// `rk4` or `rk2`.
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_leak_tol")]
    pub leak_tol: f64,
}

fn default_degree() -> usize {
    1
}
fn default_steps() -> usize {
    200
}
fn default_scheme() -> String {
    "rk4".into()
}
fn default_leak_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// `distributed` or `pointwise`.
    pub kind: String,
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub z_basis: Option<ZSpec>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    #[serde(default)]
    pub source_points: Option<String>,
    #[serde(default)]
    pub target_points: Option<String>,
    #[serde(default)]
    pub cloud: Option<CloudSpec>,
    #[serde(default)]
    pub em: Option<EmSpec>,
}

fn default_quad_order() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// `bump`, `ridge`, or `step`.
    pub kind: String,
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Translation applied to the field (the sweep parameter scales its
    /// first component).
    #[serde(default)]
    pub shift: Option<[f64; 2]>,
}

fn default_width() -> f64 {
    0.1
}
fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ZSpec {
    /// `none`, `constants`, `poly`, or `reference_snapshot`.
    pub kind: String,
    #[serde(default)]
    pub degree: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CloudSpec {
    pub count: usize,
    /// Peak displacement of the synthetic warp relating the two clouds.
    #[serde(default)]
    pub warp: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EmSpec {
    #[serde(default = "default_em_iters")]
    pub outer_iters: usize,
    #[serde(default)]
    pub sigma0: Option<f64>,
    #[serde(default)]
    pub sigma_min: Option<f64>,
    /// `row` or `doubly`.
    #[serde(default = "default_em_mode")]
    pub mode: String,
}

fn default_em_iters() -> usize {
    5
}
fn default_em_mode() -> String {
    "row".into()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    /// Tikhonov weight (0 disables; default 0, bijectivity of vector flows
    /// is structural).
    #[serde(default)]
    pub tikhonov: f64,
    #[serde(default = "default_form_l2")]
    pub tikhonov_form: String,
    /// Jacobian penalty weight (compositional maps).
    #[serde(default = "default_penalty_weight")]
    pub penalty_weight: f64,
    #[serde(default = "default_penalty_threshold")]
    pub penalty_threshold: f64,
    /// Preconditioner form: `l2`, `h1`, `elasticity`, or `h2`.
    #[serde(default = "default_form_h1")]
    pub metric_form: String,
    /// L2 shift added to the preconditioner for definiteness.
    #[serde(default = "default_metric_shift")]
    pub metric_shift: f64,
    #[serde(default = "default_quad_order_opt")]
    pub quad_order: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_max_iters() -> usize {
    200
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_gamma0() -> f64 {
    1.0
}
fn default_form_l2() -> String {
    "l2".into()
}
fn default_form_h1() -> String {
    "h1".into()
}
fn default_penalty_weight() -> f64 {
    1.0
}
fn default_penalty_threshold() -> f64 {
    JacobianPenalty::DEFAULT_THRESHOLD
}
fn default_metric_shift() -> f64 {
    1e-6
}
fn default_quad_order_opt() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModalSpec {
    #[serde(default = "default_forms")]
    pub forms: Vec<String>,
    pub m_max: usize,
    #[serde(default = "default_quad_order_opt")]
    pub quad_order: usize,
    pub snapshots: SnapshotSpec,
    #[serde(default)]
    pub gfem: Option<GfemSpec>,
}

fn default_forms() -> Vec<String> {
    vec!["h1".into(), "elasticity".into(), "h2".into()]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSpec {
    /// `register_sweep` (run registrations over the parameter values) or
    /// `files` (load coefficient vectors).
    pub kind: String,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub paths: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GfemSpec {
    #[serde(default = "default_form_h1")]
    pub operator: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowEvalSpec {
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default)]
    pub coefficients_file: Option<String>,
    #[serde(default = "default_eval_grid")]
    pub grid: usize,
}

fn default_eval_grid() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default = "default_check_steps")]
    pub steps: usize,
    #[serde(default = "default_check_grid")]
    pub grid: usize,
    #[serde(default = "default_check_pairs")]
    pub continuity_pairs: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_check_steps() -> usize {
    1000
}
fn default_check_grid() -> usize {
    4
}
fn default_check_pairs() -> usize {
    5
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.domain.rectangle.is_none() && self.domain.mesh_file.is_none() {
            return Err(CliError::Validation(
                "domain needs either `rectangle` or `mesh_file`".into(),
            ));
        }
        if !matches!(self.map.family.as_str(), "vf" | "cm") {
            return Err(CliError::Validation(format!(
                "map.family must be `vf` or `cm`, got {:?}",
                self.map.family
            )));
        }
        if !matches!(self.map.scheme.as_str(), "rk4" | "rk2") {
            return Err(CliError::Validation(format!(
                "map.scheme must be `rk4` or `rk2`, got {:?}",
                self.map.scheme
            )));
        }
        if self.map.steps == 0 {
            return Err(CliError::Validation("map.steps must be at least 1".into()));
        }
        if let Some(target) = &self.target {
            match target.kind.as_str() {
                "distributed" => {
                    if target.field.is_none() {
                        return Err(CliError::Validation(
                            "distributed target needs a `field`".into(),
                        ));
                    }
                }
                "pointwise" => {
                    let has_files =
                        target.source_points.is_some() && target.target_points.is_some();
                    if !has_files && target.cloud.is_none() {
                        return Err(CliError::Validation(
                            "pointwise target needs point files or a `cloud` generator".into(),
                        ));
                    }
                    for path in [&target.source_points, &target.target_points]
                        .into_iter()
                        .flatten()
                    {
                        if !Path::new(path).exists() {
                            return Err(CliError::Validation(format!(
                                "point file {path:?} does not exist"
                            )));
                        }
                    }
                }
                other => {
                    return Err(CliError::Validation(format!(
                        "target.kind must be `distributed` or `pointwise`, got {other:?}"
                    )));
                }
            }
            if !(1..=5).contains(&target.quad_order) {
                return Err(CliError::Validation(
                    "target.quad_order must be in 1..=5".into(),
                ));
            }
            if let Some(em) = &target.em {
                if !matches!(em.mode.as_str(), "row" | "doubly") {
                    return Err(CliError::Validation(format!(
                        "em.mode must be `row` or `doubly`, got {:?}",
                        em.mode
                    )));
                }
            }
        }
        if let Some(mesh) = &self.domain.mesh_file {
            if !Path::new(mesh).exists() {
                return Err(CliError::Validation(format!(
                    "mesh file {mesh:?} does not exist"
                )));
            }
        }
        if let Some(modal) = &self.modal {
            for form in &modal.forms {
                parse_form(form).map_err(|e| CliError::Validation(e.to_string()))?;
            }
            match modal.snapshots.kind.as_str() {
                "register_sweep" => {
                    if modal.snapshots.values.is_empty() {
                        return Err(CliError::Validation(
                            "register_sweep snapshots need `values`".into(),
                        ));
                    }
                }
                "files" => {
                    if modal.snapshots.paths.is_empty() {
                        return Err(CliError::Validation(
                            "file snapshots need `paths`".into(),
                        ));
                    }
                    for p in &modal.snapshots.paths {
                        if !Path::new(p).exists() {
                            return Err(CliError::Validation(format!(
                                "snapshot file {p:?} does not exist"
                            )));
                        }
                    }
                }
                other => {
                    return Err(CliError::Validation(format!(
                        "snapshots.kind must be `register_sweep` or `files`, got {other:?}"
                    )));
                }
            }
        }
        parse_form(&self.optimizer.metric_form).map_err(|e| CliError::Validation(e.to_string()))?;
        parse_form(&self.optimizer.tikhonov_form)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(())
    }
}

/// The geometry a run operates on.
pub struct Geometry {
    pub domain: PolygonalDomain,
    pub triangulation: Triangulation,
    pub curved: Option<CurvedMap>,
}

pub fn build_geometry(spec: &DomainSpec) -> CliResult<Geometry> {
    let (domain, triangulation) = if let Some(mesh) = &spec.mesh_file {
        let tri = Triangulation::read_mesh_file(mesh).map_err(CliError::numerical)?;
        let rect = spec.rectangle.ok_or_else(|| {
            CliError::Validation(
                "mesh_file runs still need `rectangle` for the domain bounds".into(),
            )
        })?;
        let domain =
            PolygonalDomain::rectangle(rect[0], rect[1], rect[2], rect[3]).map_err(CliError::numerical)?;
        tri.validate(&domain).map_err(CliError::numerical)?;
        (domain, tri)
    } else {
        let rect = spec.rectangle.expect("validated");
        let domain = PolygonalDomain::rectangle(rect[0], rect[1], rect[2], rect[3])
            .map_err(CliError::numerical)?;
        let tri =
            Triangulation::structured_rectangle(&domain, spec.resolution[0], spec.resolution[1])
                .map_err(CliError::numerical)?;
        (domain, tri)
    };
    let curved = match &spec.curved_map {
        None => None,
        Some(cm) => Some(build_curved(cm)?),
    };
    Ok(Geometry {
        domain,
        triangulation,
        curved,
    })
}

fn build_curved(spec: &CurvedMapSpec) -> CliResult<CurvedMap> {
    match spec.kind.as_str() {
        "identity" => Ok(CurvedMap::identity()),
        "affine" => {
            let m = spec.matrix.ok_or_else(|| {
                CliError::Validation("affine curved map needs `matrix`".into())
            })?;
            let c = spec.offset.unwrap_or([0.0, 0.0]);
            CurvedMap::affine(
                Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1]),
                Vec2::new(c[0], c[1]),
            )
            .map_err(CliError::numerical)
        }
        "parabolic_shear" => Ok(CurvedMap::parabolic_shear(spec.alpha.unwrap_or(0.2))),
        other => Err(CliError::Validation(format!(
            "unknown curved map kind {other:?}"
        ))),
    }
}

/// Parses a metric/operator form tag; `elasticity` uses E = 1, nu = 1/3.
pub fn parse_form(tag: &str) -> flowmorph::Result<GramForm> {
    match tag {
        "l2" => Ok(GramForm::L2),
        "h1" => Ok(GramForm::H1Semi),
        "h2" => Ok(GramForm::H2Semi),
        "elasticity" => Ok(GramForm::Elasticity {
            youngs: 1.0,
            poisson: 1.0 / 3.0,
        }),
        other => Err(flowmorph::Error::InvalidArgument(format!(
            "unknown form tag {other:?} (expected l2, h1, elasticity, or h2)"
        ))),
    }
}

pub fn build_field(spec: &FieldSpec, shift_override: Option<f64>) -> CliResult<FieldRef> {
    let center = spec.center.unwrap_or([0.5, 0.5]);
    let base: FieldRef = match spec.kind.as_str() {
        "bump" => Arc::new(GaussianBump {
            center: Vec2::new(center[0], center[1]),
            width: spec.width,
            amplitude: spec.amplitude,
        }),
        "ridge" => Arc::new(GaussianRidge {
            center_x: center[0],
            width: spec.width,
            amplitude: spec.amplitude,
        }),
        "step" => Arc::new(SmoothedStep {
            offset: center[1],
            wiggle: spec.amplitude * 0.2,
            width: spec.width,
        }),
        other => {
            return Err(CliError::Validation(format!(
                "unknown field kind {other:?}"
            )))
        }
    };
    let mut shift = spec.shift.map(|s| Vec2::new(s[0], s[1])).unwrap_or_default();
    if let Some(mu) = shift_override {
        shift.x = mu;
    }
    if shift == Vec2::zeros() {
        Ok(base)
    } else {
        Ok(Arc::new(Shifted { inner: base, shift }))
    }
}

fn build_z_basis(
    spec: Option<&ZSpec>,
    reference: &FieldRef,
) -> CliResult<Vec<ScalarFn>> {
    let Some(spec) = spec else {
        return Ok(vec![Arc::new(|_x| 1.0)]);
    };
    match spec.kind.as_str() {
        "none" => Ok(vec![]),
        "constants" => Ok(vec![Arc::new(|_x| 1.0)]),
        "poly" => {
            let degree = spec.degree.unwrap_or(1);
            let mut z: Vec<ScalarFn> = Vec::new();
            for total in 0..=degree {
                for i in 0..=total {
                    let j = total - i;
                    z.push(Arc::new(move |x: Vec2| {
                        x.x.powi(i as i32) * x.y.powi(j as i32)
                    }));
                }
            }
            Ok(z)
        }
        "reference_snapshot" => {
            let field = reference.clone();
            Ok(vec![Arc::new(move |x: Vec2| field.value(x))])
        }
        other => Err(CliError::Validation(format!(
            "unknown z_basis kind {other:?}"
        ))),
    }
}

/// Synthetic warp used by the cloud generator: a compositional map pushing
/// the interior in +x1 by roughly `strength` at the domain center.
pub fn synthetic_warp(domain: &PolygonalDomain, strength: f64) -> CliResult<DisplacementModel> {
    let basis: BasisRef = Arc::new(
        TangentialPolyBasis::unnormalized(domain, 0).map_err(CliError::numerical)?,
    );
    let n = basis.len();
    let mut coeffs = nalgebra::DVector::zeros(n);
    // Member 0 is the x1-bubble; peak displacement strength at the center.
    coeffs[0] = 4.0 * strength;
    DisplacementModel::new(basis, coeffs, domain.clone(), None).map_err(CliError::numerical)
}

pub struct CloudPair {
    pub sources: Vec<Vec2>,
    pub targets: Vec<Vec2>,
}

pub fn generate_clouds(
    domain: &PolygonalDomain,
    spec: &CloudSpec,
    seed: u64,
) -> CliResult<CloudPair> {
    let warp = synthetic_warp(domain, spec.warp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounding_box();
    let mut sources = Vec::with_capacity(spec.count);
    while sources.len() < spec.count {
        let p = Vec2::new(
            lo.x + (hi.x - lo.x) * rng.random_range(0.05..0.95),
            lo.y + (hi.y - lo.y) * rng.random_range(0.05..0.95),
        );
        if domain.contains(p, 0.0) {
            sources.push(p);
        }
    }
    let targets = warp.evaluate(&sources).map_err(CliError::numerical)?;
    Ok(CloudPair { sources, targets })
}

pub struct BuiltTarget {
    pub target: Target,
    pub em: Option<EmSpec>,
}

pub fn build_target(
    spec: &TargetSpec,
    geometry: &Geometry,
    seed: u64,
    shift_override: Option<f64>,
) -> CliResult<BuiltTarget> {
    match spec.kind.as_str() {
        "distributed" => {
            let field_spec = spec.field.as_ref().expect("validated");
            let field = build_field(field_spec, shift_override)?;
            let reference = build_field(field_spec, Some(0.0))?;
            let z = build_z_basis(spec.z_basis.as_ref(), &reference)?;
            let quad = geometry
                .triangulation
                .quadrature(spec.quad_order)
                .map_err(CliError::numerical)?;
            let target = DistributedTarget::new(field, z, quad).map_err(CliError::numerical)?;
            Ok(BuiltTarget {
                target: Target::Distributed(target),
                em: spec.em.clone(),
            })
        }
        "pointwise" => {
            let mode = match spec.em.as_ref().map(|e| e.mode.as_str()) {
                Some("doubly") => WeightMode::DoublyStochastic,
                _ => WeightMode::RowStochastic,
            };
            let (sources, targets) = if let (Some(sp), Some(tp)) =
                (&spec.source_points, &spec.target_points)
            {
                let sources = flowmorph::io::read_points_csv(sp).map_err(CliError::numerical)?;
                let targets = flowmorph::io::read_points_csv(tp).map_err(CliError::numerical)?;
                (sources, targets)
            } else {
                let cloud_spec = spec.cloud.as_ref().expect("validated");
                let pair = generate_clouds(&geometry.domain, cloud_spec, seed)?;
                (pair.sources, pair.targets)
            };
            let target = PointwiseTarget::uniform(sources, targets, mode)
                .map_err(CliError::numerical)?;
            Ok(BuiltTarget {
                target: Target::Pointwise(target),
                em: spec.em.clone(),
            })
        }
        _ => unreachable!("validated"),
    }
}

pub fn build_map(spec: &MapSpec, geometry: &Geometry, penalty_threshold: f64, quad_order: usize)
    -> CliResult<MapModel>
{
    let spatial: BasisRef = Arc::new(
        TangentialPolyBasis::new(&geometry.domain, spec.degree).map_err(CliError::numerical)?,
    );
    let scheme = match spec.scheme.as_str() {
        "rk2" => Scheme::Rk2,
        _ => Scheme::Rk4,
    };
    match spec.family.as_str() {
        "vf" => {
            let st: BasisRef = Arc::new(
                tensorize_time(spatial.clone(), spec.temporal_degree)
                    .map_err(CliError::numerical)?,
            );
            let params = FlowParams::new(spec.steps)
                .with_scheme(scheme)
                .with_leak_tol(spec.leak_tol);
            Ok(MapModel::VectorFlow {
                basis: st,
                domain: geometry.domain.clone(),
                params,
            })
        }
        "cm" => {
            let template = DisplacementModel::new(
                spatial.clone(),
                nalgebra::DVector::zeros(spatial.len()),
                geometry.domain.clone(),
                geometry.curved.clone(),
            )
            .map_err(CliError::numerical)?;
            let quad = geometry
                .triangulation
                .quadrature(quad_order)
                .map_err(CliError::numerical)?;
            let penalty = JacobianPenalty::with_boundary_samples(
                penalty_threshold,
                &quad,
                &geometry.domain,
                32,
            )
            .map_err(CliError::numerical)?;
            Ok(MapModel::Compositional {
                template,
                penalty,
                check_density: 64,
            })
        }
        _ => unreachable!("validated"),
    }
}

/// Assembles the preconditioner `form + shift * L2` over the map basis.
pub fn build_metric(
    spec: &OptimizerSpec,
    spatial_basis: &BasisRef,
    temporal_blocks: usize,
    geometry: &Geometry,
) -> CliResult<(Metric, GramMatrix)> {
    let form = parse_form(&spec.metric_form).map_err(CliError::numerical)?;
    let gram = assemble_gram(
        spatial_basis.as_ref(),
        form,
        &geometry.triangulation,
        spec.quad_order,
    )
    .map_err(CliError::numerical)?;
    let l2 = assemble_gram(
        spatial_basis.as_ref(),
        GramForm::L2,
        &geometry.triangulation,
        spec.quad_order,
    )
    .map_err(CliError::numerical)?;
    let spatial_h = gram.matrix() + l2.matrix() * spec.metric_shift;
    // Space-time bases repeat the spatial block per Legendre degree; the
    // shifted Legendre family is not L2(0,1)-orthonormal but the block
    // metric stays SPD, which is all preconditioning needs.
    let n = spatial_h.nrows() * temporal_blocks;
    let mut h = nalgebra::DMatrix::zeros(n, n);
    for b in 0..temporal_blocks {
        for i in 0..spatial_h.nrows() {
            for j in 0..spatial_h.ncols() {
                h[(i * temporal_blocks + b, j * temporal_blocks + b)] = spatial_h[(i, j)];
            }
        }
    }
    let metric = Metric::new(h).map_err(CliError::numerical)?;
    Ok((metric, gram))
}

pub struct BuiltProblem {
    pub problem: RegistrationProblem,
    pub em: Option<EmSpec>,
    pub config: MinimizeConfig,
}

pub fn build_problem(
    config: &RunConfig,
    geometry: &Geometry,
    seed: u64,
    shift_override: Option<f64>,
) -> CliResult<BuiltProblem> {
    let target_spec = config
        .target
        .as_ref()
        .ok_or_else(|| CliError::Validation("this command needs a `target` section".into()))?;
    let built_target = build_target(target_spec, geometry, seed, shift_override)?;
    let map = build_map(
        &config.map,
        geometry,
        config.optimizer.penalty_threshold,
        config.optimizer.quad_order,
    )?;
    let temporal_blocks = if config.map.family == "vf" {
        config.map.temporal_degree + 1
    } else {
        1
    };
    let spatial: BasisRef = Arc::new(
        TangentialPolyBasis::new(&geometry.domain, config.map.degree)
            .map_err(CliError::numerical)?,
    );
    let (metric, _) = build_metric(&config.optimizer, &spatial, temporal_blocks, geometry)?;
    let tikhonov = if config.optimizer.tikhonov > 0.0 {
        let form = parse_form(&config.optimizer.tikhonov_form).map_err(CliError::numerical)?;
        let gram_spatial = assemble_gram(
            spatial.as_ref(),
            form,
            &geometry.triangulation,
            config.optimizer.quad_order,
        )
        .map_err(CliError::numerical)?;
        let n = gram_spatial.size() * temporal_blocks;
        let mut op = nalgebra::DMatrix::zeros(n, n);
        for b in 0..temporal_blocks {
            for i in 0..gram_spatial.size() {
                for j in 0..gram_spatial.size() {
                    op[(i * temporal_blocks + b, j * temporal_blocks + b)] =
                        gram_spatial.matrix()[(i, j)];
                }
            }
        }
        Some(Tikhonov {
            weight: config.optimizer.tikhonov,
            operator: op,
        })
    } else {
        None
    };
    let problem = RegistrationProblem::new(
        map,
        built_target.target,
        tikhonov,
        metric,
        config.optimizer.penalty_weight,
    )
    .map_err(CliError::numerical)?;
    Ok(BuiltProblem {
        problem,
        em: built_target.em,
        config: MinimizeConfig {
            max_iters: config.optimizer.max_iters,
            grad_tol: config.optimizer.grad_tol,
            gamma0: config.optimizer.gamma0,
            ..Default::default()
        },
    })
}
