//! Metric-preconditioned gradient descent with Armijo backtracking, the
//! registration objective wrapper, and the EM outer loop for point-set
//! targets.
//!
//! The update `a <- a - gamma H^{-1} grad E` is independent of the chosen
//! coefficient basis; only the inner product behind `H` matters.

use crate::basis::{BasisRef, GramMatrix};
use crate::compositional::{
    bijectivity_check, cm_target_gradient, BijectivityVerdict, DisplacementModel, JacobianPenalty,
    BIJECTIVITY_MARGIN,
};
use crate::error::{Error, Result};
use crate::geometry::PolygonalDomain;
use crate::targets::{anneal_sigma, mean_pairwise_distance, Target};
use crate::vectorflow::{
    adjoint_gradient_distributed, adjoint_gradient_pointwise, integrate_flow, FlowParams,
    VelocityModel,
};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// A factorized symmetric positive definite preconditioner.
pub struct Metric {
    chol: Cholesky<f64, Dyn>,
    size: usize,
}

impl Metric {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        let size = h.nrows();
        let chol = Cholesky::new(h).ok_or_else(|| {
            Error::Decomposition("preconditioner matrix is not positive definite".into())
        })?;
        Ok(Metric { chol, size })
    }

    pub fn identity(size: usize) -> Self {
        Metric {
            chol: Cholesky::new(DMatrix::identity(size, size)).expect("identity is SPD"),
            size,
        }
    }

    /// `H^{-1} g` through the cached factorization.
    pub fn solve(&self, g: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(g)
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// One preconditioned descent step `a - gamma H^{-1} grad`.
pub fn preconditioned_step(
    a: &DVector<f64>,
    grad: &DVector<f64>,
    gamma: f64,
    metric: &Metric,
) -> DVector<f64> {
    a - metric.solve(grad) * gamma
}

/// A differentiable objective over coefficient vectors.
pub trait Objective {
    fn value(&self, a: &DVector<f64>) -> Result<f64>;
    fn value_and_gradient(&self, a: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
    fn dimension(&self) -> usize;
}

#[derive(Clone, Copy, Debug)]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Termination threshold on the H^{-1}-norm of the gradient.
    pub grad_tol: f64,
    pub gamma0: f64,
    pub backtrack_rho: f64,
    pub armijo_c: f64,
    /// Line-search failure threshold on the step size.
    pub min_step: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 200,
            grad_tol: 1e-8,
            gamma0: 1.0,
            backtrack_rho: 0.5,
            armijo_c: 1e-4,
            min_step: 1e-14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradTol,
    MaxIters,
    LineSearchFailure,
}

impl Termination {
    pub fn tag(&self) -> &'static str {
        match self {
            Termination::GradTol => "grad_tol",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    /// H^{-1}-norm of the gradient at this iterate.
    pub grad_norm: f64,
    /// Accepted step size (0 for the initial record).
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizerReport {
    pub iterates: Vec<IterRecord>,
    pub final_coefficients: DVector<f64>,
    pub final_objective: f64,
    pub termination: Termination,
    /// Penalty weight in effect when optimization finished (CM runs).
    pub penalty_weight: Option<f64>,
}

impl OptimizerReport {
    pub fn initial_objective(&self) -> f64 {
        self.iterates.first().map(|r| r.objective).unwrap_or(0.0)
    }

    /// CSV dump `iter, objective, grad_norm, step`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,grad_norm,step\n");
        for r in &self.iterates {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iter,
                crate::io::fmt_g17(r.objective),
                crate::io::fmt_g17(r.grad_norm),
                crate::io::fmt_g17(r.step)
            ));
        }
        out
    }
}

/// Preconditioned descent with Armijo backtracking on the H^{-1}-gradient
/// direction. Every accepted step satisfies
/// `f(a') <= f(a) - c gamma grad . H^{-1} grad`.
pub fn minimize(
    objective: &dyn Objective,
    a0: DVector<f64>,
    metric: &Metric,
    config: &MinimizeConfig,
) -> Result<OptimizerReport> {
    if metric.size() != objective.dimension() {
        return Err(Error::DimensionMismatch {
            expected: objective.dimension(),
            got: metric.size(),
        });
    }
    let mut a = a0;
    let (mut value, mut grad) = objective.value_and_gradient(&a)?;
    let mut iterates = Vec::with_capacity(config.max_iters + 1);
    let mut termination = Termination::MaxIters;

    for iter in 0..=config.max_iters {
        let direction = metric.solve(&grad);
        let decrease = grad.dot(&direction); // grad^T H^{-1} grad >= 0
        let grad_norm = decrease.max(0.0).sqrt();
        iterates.push(IterRecord {
            iter,
            objective: value,
            grad_norm,
            step: 0.0,
        });
        if grad_norm <= config.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        if iter == config.max_iters {
            break;
        }

        let mut gamma = config.gamma0;
        let mut accepted = false;
        while gamma >= config.min_step {
            let candidate = &a - &direction * gamma;
            let trial = objective.value(&candidate)?;
            if trial <= value - config.armijo_c * gamma * decrease {
                a = candidate;
                let (v, g) = objective.value_and_gradient(&a)?;
                value = v;
                grad = g;
                iterates.last_mut().expect("recorded above").step = gamma;
                accepted = true;
                break;
            }
            gamma *= config.backtrack_rho;
        }
        if !accepted {
            termination = Termination::LineSearchFailure;
            break;
        }
    }

    Ok(OptimizerReport {
        final_objective: value,
        final_coefficients: a,
        iterates,
        termination,
        penalty_weight: None,
    })
}

/// Central finite differences of the objective, the reference oracle for
/// every analytic gradient path.
pub fn finite_difference_gradient(
    objective: &dyn Objective,
    a: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(a.len());
    for i in 0..a.len() {
        let mut ap = a.clone();
        ap[i] += h;
        let mut am = a.clone();
        am[i] -= h;
        grad[i] = (objective.value(&ap)? - objective.value(&am)?) / (2.0 * h);
    }
    Ok(grad)
}

/// The map family being optimized.
pub enum MapModel {
    VectorFlow {
        basis: BasisRef,
        domain: PolygonalDomain,
        params: FlowParams,
    },
    Compositional {
        template: DisplacementModel,
        penalty: JacobianPenalty,
        /// Grid density for the bijectivity oracle used by continuation.
        check_density: usize,
    },
}

impl MapModel {
    pub fn dimension(&self) -> usize {
        match self {
            MapModel::VectorFlow { basis, .. } => basis.len(),
            MapModel::Compositional { template, .. } => template.len(),
        }
    }

    /// Images of the target sample points under the map at `a`.
    pub fn map_points(&self, a: &DVector<f64>, points: &[crate::Vec2]) -> Result<Vec<crate::Vec2>> {
        match self {
            MapModel::VectorFlow {
                basis,
                domain,
                params,
            } => {
                let model = VelocityModel::new(basis.clone(), a.clone())?;
                Ok(integrate_flow(&model, domain, points, *params)?.endpoints())
            }
            MapModel::Compositional { template, .. } => {
                template.with_coefficients(a.clone())?.evaluate_auto(points)
            }
        }
    }
}

/// Tikhonov term `lambda a^T A a` with its gradient `2 lambda A a`.
#[derive(Clone)]
pub struct Tikhonov {
    pub weight: f64,
    pub operator: DMatrix<f64>,
}

impl Tikhonov {
    pub fn from_gram(weight: f64, gram: &GramMatrix) -> Self {
        Tikhonov {
            weight,
            operator: gram.matrix().clone(),
        }
    }

    fn value_and_gradient(&self, a: &DVector<f64>) -> (f64, DVector<f64>) {
        let aa = &self.operator * a;
        (self.weight * a.dot(&aa), aa * (2.0 * self.weight))
    }
}

/// The regularized registration objective
/// `E(a) + lambda a^T A a (+ lambda_pen f_pen(a) for CMs)`.
pub struct RegistrationProblem {
    pub map: MapModel,
    pub target: Target,
    pub tikhonov: Option<Tikhonov>,
    pub metric: Metric,
    /// Penalty weight; doubled by continuation when bijectivity fails.
    pub penalty_weight: f64,
    sample_points: Vec<crate::Vec2>,
}

impl RegistrationProblem {
    pub fn new(
        map: MapModel,
        target: Target,
        tikhonov: Option<Tikhonov>,
        metric: Metric,
        penalty_weight: f64,
    ) -> Result<Self> {
        if metric.size() != map.dimension() {
            return Err(Error::DimensionMismatch {
                expected: map.dimension(),
                got: metric.size(),
            });
        }
        let sample_points = target.sample_points();
        Ok(RegistrationProblem {
            map,
            target,
            tikhonov,
            metric,
            penalty_weight,
            sample_points,
        })
    }

    pub fn target_value(&self, a: &DVector<f64>) -> Result<f64> {
        let images = self.map.map_points(a, &self.sample_points)?;
        self.target.eval(&images)
    }

    fn penalty_value_and_gradient(&self, a: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        match &self.map {
            MapModel::Compositional {
                template, penalty, ..
            } if self.penalty_weight > 0.0 => {
                let model = template.with_coefficients(a.clone())?;
                let (v, g) = penalty.value_and_gradient(&model);
                Ok(Some((v, g)))
            }
            _ => Ok(None),
        }
    }

    fn target_gradient(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.map {
            MapModel::VectorFlow {
                basis,
                domain,
                params,
            } => {
                let model = VelocityModel::new(basis.clone(), a.clone())?;
                match &self.target {
                    Target::Pointwise(t) => adjoint_gradient_pointwise(&model, domain, t, *params),
                    Target::Distributed(t) => {
                        adjoint_gradient_distributed(&model, domain, t, *params)
                    }
                }
            }
            MapModel::Compositional { template, .. } => {
                let model = template.with_coefficients(a.clone())?;
                cm_target_gradient(&model, &self.target)
            }
        }
    }
}

impl Objective for RegistrationProblem {
    fn value(&self, a: &DVector<f64>) -> Result<f64> {
        let mut value = self.target_value(a)?;
        if let Some(tik) = &self.tikhonov {
            value += tik.value_and_gradient(a).0;
        }
        if let Some((pen, _)) = self.penalty_value_and_gradient(a)? {
            value += self.penalty_weight * pen;
        }
        Ok(value)
    }

    fn value_and_gradient(&self, a: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let mut value = self.target_value(a)?;
        let mut grad = self.target_gradient(a)?;
        if let Some(tik) = &self.tikhonov {
            let (v, g) = tik.value_and_gradient(a);
            value += v;
            grad += g;
        }
        if let Some((pen, peng)) = self.penalty_value_and_gradient(a)? {
            value += self.penalty_weight * pen;
            grad += peng * self.penalty_weight;
        }
        Ok((value, grad))
    }

    fn dimension(&self) -> usize {
        self.map.dimension()
    }
}

/// Maximum penalty-weight doublings before giving up on continuation.
const MAX_CONTINUATION_ROUNDS: usize = 40;
/// Continuation stops once the penalty weight reaches this magnitude.
const MAX_PENALTY_WEIGHT: f64 = 1e12;

/// Minimizes the registration objective. For compositional maps the
/// penalty weight is doubled and optimization restarted from the incumbent
/// whenever the bijectivity oracle reports a violation, realizing the
/// constrained form of the problem by continuation.
pub fn minimize_problem(
    problem: &mut RegistrationProblem,
    a0: DVector<f64>,
    config: &MinimizeConfig,
) -> Result<OptimizerReport> {
    let mut start = a0;
    let mut merged: Option<OptimizerReport> = None;
    for _ in 0..MAX_CONTINUATION_ROUNDS {
        let report = minimize(problem, start.clone(), &problem.metric, config)?;
        start = report.final_coefficients.clone();
        merged = Some(match merged {
            None => report,
            Some(mut acc) => {
                let offset = acc.iterates.len();
                acc.iterates.extend(report.iterates.into_iter().map(|mut r| {
                    r.iter += offset;
                    r
                }));
                acc.final_coefficients = report.final_coefficients;
                acc.final_objective = report.final_objective;
                acc.termination = report.termination;
                acc
            }
        });
        match &problem.map {
            MapModel::Compositional {
                template,
                check_density,
                penalty,
                ..
            } => {
                let model = template.with_coefficients(start.clone())?;
                let verdict = bijectivity_check(
                    &model,
                    *check_density,
                    &penalty.points(),
                    BIJECTIVITY_MARGIN,
                );
                if let BijectivityVerdict::Violated { .. } = verdict {
                    if problem.penalty_weight < MAX_PENALTY_WEIGHT {
                        problem.penalty_weight = (problem.penalty_weight * 2.0).max(1e-6);
                        continue;
                    }
                }
                break;
            }
            MapModel::VectorFlow { .. } => break,
        }
    }
    let mut report = merged.expect("at least one optimization round ran");
    report.penalty_weight = match &problem.map {
        MapModel::Compositional { .. } => Some(problem.penalty_weight),
        MapModel::VectorFlow { .. } => None,
    };
    Ok(report)
}

/// EM outer-loop schedule for pointwise targets: weights are re-estimated
/// between optimizer runs with a deterministically annealed bandwidth.
#[derive(Clone, Copy, Debug)]
pub struct EmSchedule {
    pub outer_iters: usize,
    /// Initial bandwidth; defaults to the mean pairwise distance.
    pub sigma0: Option<f64>,
    pub sigma_min: f64,
}

impl EmSchedule {
    pub fn new(outer_iters: usize, domain_diameter: f64) -> Self {
        EmSchedule {
            outer_iters,
            sigma0: None,
            sigma_min: 1e-3 * domain_diameter,
        }
    }
}

/// Alternates EM weight updates with registration solves. Requires a
/// pointwise target; returns the report of the final solve.
pub fn minimize_with_em(
    problem: &mut RegistrationProblem,
    a0: DVector<f64>,
    config: &MinimizeConfig,
    em: EmSchedule,
) -> Result<OptimizerReport> {
    {
        let Target::Pointwise(_) = &problem.target else {
            return Err(Error::InvalidArgument(
                "EM outer loop requires a pointwise target".into(),
            ));
        };
    }
    let mut sigma = match em.sigma0 {
        Some(s) => s,
        None => {
            let Target::Pointwise(t) = &problem.target else {
                unreachable!()
            };
            mean_pairwise_distance(t.sources(), t.targets())
        }
    };
    let mut a = a0;
    let mut report = None;
    for _ in 0..em.outer_iters.max(1) {
        // E step: refresh correspondence weights at the current images.
        let images = problem.map.map_points(&a, &problem.sample_points)?;
        {
            let Target::Pointwise(t) = &mut problem.target else {
                unreachable!()
            };
            let weights = t.em_update_weights(&images, sigma)?;
            t.set_weights(weights)?;
        }
        // M step: re-optimize the map coefficients.
        let r = minimize_problem(problem, a.clone(), config)?;
        a = r.final_coefficients.clone();
        report = Some(r);
        sigma = anneal_sigma(sigma, em.sigma_min);
    }
    Ok(report.expect("at least one EM round"))
}
