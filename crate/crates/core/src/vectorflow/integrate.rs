//! Runge-Kutta integration of the flow ODE and its companion quantities.
//!
//! The flow of a boundary-tangent field maps the closed domain into itself;
//! discrete trajectories may still exit by the integration error, which is
//! detected (never silently projected back, since projection would corrupt
//! gradient checks downstream).

use super::{FlowParams, FlowSolution, ReversedField, Scheme, VelocityField};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{spectral_norm, PointClass, PolygonalDomain};
use crate::{Mat2, Vec2};

/// State carried along one trajectory: position, gradient matrix, and
/// log-Jacobian, with the latter two optionally inert.
#[derive(Clone, Copy)]
struct State {
    x: Vec2,
    g: Mat2,
    logj: f64,
}

#[derive(Clone, Copy)]
struct Derivative {
    x: Vec2,
    g: Mat2,
    logj: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Track {
    Position,
    PositionLogJ,
    Full,
}

fn derivative(field: &dyn VelocityField, s: &State, t: f64, track: Track) -> Derivative {
    let dx = field.velocity(s.x, t);
    match track {
        Track::Position => Derivative {
            x: dx,
            g: Mat2::zeros(),
            logj: 0.0,
        },
        Track::PositionLogJ => Derivative {
            x: dx,
            g: Mat2::zeros(),
            logj: field.divergence(s.x, t),
        },
        Track::Full => {
            let grad_v = field.gradient(s.x, t);
            Derivative {
                x: dx,
                g: grad_v * s.g,
                logj: grad_v.trace(),
            }
        }
    }
}

fn advance(s: &State, d: &Derivative, h: f64) -> State {
    State {
        x: s.x + d.x * h,
        g: s.g + d.g * h,
        logj: s.logj + d.logj * h,
    }
}

fn combine4(s: &State, k1: &Derivative, k2: &Derivative, k3: &Derivative, k4: &Derivative, h: f64) -> State {
    let w = h / 6.0;
    State {
        x: s.x + (k1.x + k2.x * 2.0 + k3.x * 2.0 + k4.x) * w,
        g: s.g + (k1.g + k2.g * 2.0 + k3.g * 2.0 + k4.g) * w,
        logj: s.logj + (k1.logj + 2.0 * k2.logj + 2.0 * k3.logj + k4.logj) * w,
    }
}

fn step(field: &dyn VelocityField, s: &State, t: f64, h: f64, scheme: Scheme, track: Track) -> State {
    match scheme {
        Scheme::Rk2 => {
            // Explicit midpoint rule.
            let k1 = derivative(field, s, t, track);
            let mid = advance(s, &k1, 0.5 * h);
            let k2 = derivative(field, &mid, t + 0.5 * h, track);
            advance(s, &k2, h)
        }
        Scheme::Rk4 => {
            let k1 = derivative(field, s, t, track);
            let s2 = advance(s, &k1, 0.5 * h);
            let k2 = derivative(field, &s2, t + 0.5 * h, track);
            let s3 = advance(s, &k2, 0.5 * h);
            let k3 = derivative(field, &s3, t + 0.5 * h, track);
            let s4 = advance(s, &k3, h);
            let k4 = derivative(field, &s4, t + h, track);
            combine4(s, &k1, &k2, &k3, &k4, h)
        }
    }
}

/// Integrates one seed, storing the tracked quantities at every node.
fn integrate_seed(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    seed_index: usize,
    seed: Vec2,
    params: FlowParams,
    track: Track,
) -> Result<(Vec<Vec2>, Vec<Mat2>, Vec<f64>)> {
    if domain.classify(seed, params.leak_tol) == PointClass::Exterior {
        return Err(Error::PointOutsideDomain {
            x: seed.x,
            y: seed.y,
        });
    }
    let k = params.steps;
    let h = 1.0 / k as f64;
    let mut state = State {
        x: seed,
        g: Mat2::identity(),
        logj: 0.0,
    };
    let mut positions = Vec::with_capacity(k + 1);
    let mut gradients = Vec::with_capacity(if track == Track::Full { k + 1 } else { 0 });
    let mut logjs = Vec::with_capacity(if track == Track::Position { 0 } else { k + 1 });
    let mut push = |s: &State| {
        positions.push(s.x);
        if track == Track::Full {
            gradients.push(s.g);
        }
        if track != Track::Position {
            logjs.push(s.logj);
        }
    };
    push(&state);
    for step_index in 0..k {
        let t = step_index as f64 * h;
        state = step(field, &state, t, h, params.scheme, track);
        if domain.classify(state.x, params.leak_tol) == PointClass::Exterior {
            return Err(Error::BoundaryLeak {
                seed: seed_index,
                step: step_index + 1,
                distance: domain.distance_to_boundary(state.x),
                tol: params.leak_tol,
            });
        }
        push(&state);
    }
    Ok((positions, gradients, logjs))
}

fn integrate_all(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
    track: Track,
) -> Result<FlowSolution> {
    if params.steps == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let indexed: Vec<(usize, Vec2)> = seeds.iter().copied().enumerate().collect();
    let per_seed = exec::try_map_collect(&indexed, |&(i, seed)| {
        integrate_seed(field, domain, i, seed, params, track)
    })?;
    let k = params.steps;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let mut positions = Vec::with_capacity(seeds.len());
    let mut gradients = Vec::with_capacity(seeds.len());
    let mut logjs = Vec::with_capacity(seeds.len());
    for (p, g, l) in per_seed {
        positions.push(p);
        if track == Track::Full {
            gradients.push(g);
        }
        if track != Track::Position {
            logjs.push(l);
        }
    }
    Ok(FlowSolution {
        seeds: seeds.to_vec(),
        times,
        positions,
        gradients: (track == Track::Full).then_some(gradients),
        log_jacobian: (track != Track::Position).then_some(logjs),
        scheme: params.scheme,
    })
}

/// Integrates the flow ODE `dX/dt = v(X, t)`, `X(0) = xi`, for every seed.
pub fn integrate_flow(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
) -> Result<FlowSolution> {
    integrate_all(field, domain, seeds, params, Track::Position)
}

/// Co-integrates the gradient ODE `d(grad X)/dt = grad_x v(X, t) grad X`
/// with `grad X(0) = I`, along with the log-Jacobian.
pub fn integrate_flow_gradient(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
) -> Result<FlowSolution> {
    integrate_all(field, domain, seeds, params, Track::Full)
}

/// Integrates `d log J / dt = div v(X, t)` along each trajectory; the
/// Jacobian determinant `J = exp(log J)` is positive by construction.
pub fn jacobian_logdet(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    seeds: &[Vec2],
    params: FlowParams,
) -> Result<FlowSolution> {
    integrate_all(field, domain, seeds, params, Track::PositionLogJ)
}

/// Preimages under the flow: integrates the reversed field
/// `w(x, t) = -v(x, 1 - t)`, whose time-1 flow inverts the original.
pub fn inverse_map(
    field: &dyn VelocityField,
    domain: &PolygonalDomain,
    points: &[Vec2],
    params: FlowParams,
) -> Result<Vec<Vec2>> {
    let reversed = ReversedField(field);
    Ok(integrate_flow(&reversed, domain, points, params)?.endpoints())
}

/// Both sides of the continuity-in-data bound
/// `|F[v] - F[w]|_inf <= (e^L - 1) / L |v - w|_inf`.
#[derive(Clone, Copy, Debug)]
pub struct ContinuityReport {
    /// Largest endpoint distance over the sample seeds.
    pub lhs: f64,
    /// `(e^L - 1) / L` times the measured sup-norm of `v - w`.
    pub rhs: f64,
    /// Lipschitz constant of `v`, measured as the largest spectral norm of
    /// its spatial gradient over a dense space-time sample.
    pub lipschitz: f64,
    pub velocity_gap: f64,
}

/// Measures the continuity bound on a pair of fields. `sample_seeds` are
/// integrated through both flows; the Lipschitz constant and the velocity
/// gap are estimated on a `dense_n x dense_n x dense_n` space-time grid.
pub fn continuity_gap(
    v: &dyn VelocityField,
    w: &dyn VelocityField,
    domain: &PolygonalDomain,
    sample_seeds: &[Vec2],
    params: FlowParams,
    dense_n: usize,
) -> Result<ContinuityReport> {
    let fv = integrate_flow(v, domain, sample_seeds, params)?;
    let fw = integrate_flow(w, domain, sample_seeds, params)?;
    let lhs = fv
        .endpoints()
        .iter()
        .zip(fw.endpoints())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);

    let (lo, hi) = domain.bounding_box();
    let mut lipschitz: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for i in 0..=dense_n {
        for j in 0..=dense_n {
            let x = Vec2::new(
                lo.x + (hi.x - lo.x) * i as f64 / dense_n as f64,
                lo.y + (hi.y - lo.y) * j as f64 / dense_n as f64,
            );
            if !domain.contains(x, 1e-12) {
                continue;
            }
            for kt in 0..=dense_n {
                let t = kt as f64 / dense_n as f64;
                lipschitz = lipschitz.max(spectral_norm(&v.gradient(x, t)));
                gap = gap.max((v.velocity(x, t) - w.velocity(x, t)).norm());
            }
        }
    }
    let factor = if lipschitz < 1e-12 {
        1.0
    } else {
        lipschitz.exp_m1() / lipschitz
    };
    Ok(ContinuityReport {
        lhs,
        rhs: factor * gap,
        lipschitz,
        velocity_gap: gap,
    })
}
