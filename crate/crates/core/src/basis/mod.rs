//! Finite families of boundary-tangent vector fields.
//!
//! Tangency is enforced directly in the space through bubble factors: the
//! first component carries `(x1 - a)(b - x1)` and the second
//! `(x2 - c)(d - x2)`, so the normal trace vanishes identically on every
//! facet of an axis-aligned rectangle.

mod gram;

pub use gram::{assemble_gram, GramForm, GramMatrix};

use crate::error::{Error, Result};
use crate::geometry::PolygonalDomain;
use crate::poly::{shifted_legendre, Poly};
use crate::{Mat2, Vec2};
use std::sync::Arc;

/// Whether a basis is purely spatial or tensorized with time polynomials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    Spatial,
    SpaceTime,
}

/// Second spatial derivatives of one member, per component.
#[derive(Clone, Copy, Debug)]
pub struct SecondDerivs {
    pub dxx: Vec2,
    pub dxy: Vec2,
    pub dyy: Vec2,
}

/// A finite family of vector fields, evaluable with spatial derivatives.
///
/// `eval_grad` returns the spatial Jacobian with entry `(r, c)` equal to
/// the derivative of component `r` with respect to coordinate `c`. Spatial
/// bases ignore the time argument.
pub trait VectorBasis: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kind(&self) -> BasisKind;

    fn eval(&self, member: usize, x: Vec2, t: f64) -> Vec2;

    fn eval_grad(&self, member: usize, x: Vec2, t: f64) -> Mat2;

    fn eval_second(&self, member: usize, x: Vec2, t: f64) -> SecondDerivs;
}

pub type BasisRef = Arc<dyn VectorBasis>;

/// One tensor-product member: `component` selects which vector slot holds
/// `fx(x1) * fy(x2)`; the other slot is zero.
#[derive(Clone, Debug)]
struct Member {
    component: usize,
    fx: Poly,
    fy: Poly,
    dfx: Poly,
    dfy: Poly,
    d2fx: Poly,
    d2fy: Poly,
}

impl Member {
    fn new(component: usize, fx: Poly, fy: Poly) -> Self {
        let dfx = fx.derivative();
        let dfy = fy.derivative();
        let d2fx = dfx.derivative();
        let d2fy = dfy.derivative();
        Member {
            component,
            fx,
            fy,
            dfx,
            dfy,
            d2fx,
            d2fy,
        }
    }
}

/// Boundary-tangent polynomial basis on an axis-aligned rectangle.
///
/// For degree `p` the family holds `2 (p+1)^2` members: the bubble in each
/// component times every tensor monomial `x1^i x2^j` with per-variable
/// degree at most `p`.
#[derive(Clone, Debug)]
pub struct TangentialPolyBasis {
    rect: (f64, f64, f64, f64),
    degree: usize,
    normalized: bool,
    members: Vec<Member>,
}

impl TangentialPolyBasis {
    /// L2-normalized basis (the default; Gram matrices stay well scaled).
    pub fn new(domain: &PolygonalDomain, degree: usize) -> Result<Self> {
        let mut basis = Self::unnormalized(domain, degree)?;
        for m in &mut basis.members {
            let norm2 = m.fx.mul(&m.fx).integral(basis.rect.0, basis.rect.1)
                * m.fy.mul(&m.fy).integral(basis.rect.2, basis.rect.3);
            let scale = 1.0 / norm2.sqrt();
            *m = Member::new(m.component, m.fx.scaled(scale), m.fy.clone());
        }
        basis.normalized = true;
        Ok(basis)
    }

    /// Raw bubble-times-monomial members without normalization.
    pub fn unnormalized(domain: &PolygonalDomain, degree: usize) -> Result<Self> {
        let rect = domain.as_rectangle().ok_or_else(|| {
            Error::UnsupportedBasis(
                "tangential polynomial basis requires an axis-aligned rectangle domain".into(),
            )
        })?;
        let (a, b, c, d) = rect;
        let bubble_x = Poly::bubble(a, b);
        let bubble_y = Poly::bubble(c, d);
        let mut members = Vec::with_capacity(2 * (degree + 1) * (degree + 1));
        for component in 0..2 {
            for i in 0..=degree {
                for j in 0..=degree {
                    let (fx, fy) = match component {
                        0 => (bubble_x.mul(&Poly::monomial(i)), Poly::monomial(j)),
                        _ => (Poly::monomial(i), bubble_y.mul(&Poly::monomial(j))),
                    };
                    members.push(Member::new(component, fx, fy));
                }
            }
        }
        Ok(TangentialPolyBasis {
            rect,
            degree,
            normalized: false,
            members,
        })
    }

    /// A single-member basis from explicit 1-D factors, for hand-built
    /// velocity fields in tests and closed-form oracles.
    pub fn from_members(
        domain: &PolygonalDomain,
        members: Vec<(usize, Poly, Poly)>,
    ) -> Result<Self> {
        let rect = domain.as_rectangle().ok_or_else(|| {
            Error::UnsupportedBasis("tensor members require a rectangle domain".into())
        })?;
        Ok(TangentialPolyBasis {
            rect,
            degree: 0,
            normalized: false,
            members: members
                .into_iter()
                .map(|(c, fx, fy)| Member::new(c, fx, fy))
                .collect(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn rectangle(&self) -> (f64, f64, f64, f64) {
        self.rect
    }
}

impl VectorBasis for TangentialPolyBasis {
    fn len(&self) -> usize {
        self.members.len()
    }

    fn kind(&self) -> BasisKind {
        BasisKind::Spatial
    }

    fn eval(&self, member: usize, x: Vec2, _t: f64) -> Vec2 {
        let m = &self.members[member];
        let v = m.fx.eval(x.x) * m.fy.eval(x.y);
        match m.component {
            0 => Vec2::new(v, 0.0),
            _ => Vec2::new(0.0, v),
        }
    }

    fn eval_grad(&self, member: usize, x: Vec2, _t: f64) -> Mat2 {
        let m = &self.members[member];
        let dx = m.dfx.eval(x.x) * m.fy.eval(x.y);
        let dy = m.fx.eval(x.x) * m.dfy.eval(x.y);
        let mut g = Mat2::zeros();
        g[(m.component, 0)] = dx;
        g[(m.component, 1)] = dy;
        g
    }

    fn eval_second(&self, member: usize, x: Vec2, _t: f64) -> SecondDerivs {
        let m = &self.members[member];
        let dxx = m.d2fx.eval(x.x) * m.fy.eval(x.y);
        let dxy = m.dfx.eval(x.x) * m.dfy.eval(x.y);
        let dyy = m.fx.eval(x.x) * m.d2fy.eval(x.y);
        let set = |v: f64| -> Vec2 {
            match m.component {
                0 => Vec2::new(v, 0.0),
                _ => Vec2::new(0.0, v),
            }
        };
        SecondDerivs {
            dxx: set(dxx),
            dxy: set(dxy),
            dyy: set(dyy),
        }
    }
}

/// Space-time basis: every spatial member times each shifted Legendre
/// polynomial up to `temporal_degree`. Member `(i, k)` sits at index
/// `i * (temporal_degree + 1) + k`.
#[derive(Clone)]
pub struct SpaceTimeBasis {
    spatial: BasisRef,
    temporal_degree: usize,
}

impl SpaceTimeBasis {
    pub fn spatial_len(&self) -> usize {
        self.spatial.len()
    }

    pub fn temporal_degree(&self) -> usize {
        self.temporal_degree
    }

    fn split(&self, member: usize) -> (usize, usize) {
        let nt = self.temporal_degree + 1;
        (member / nt, member % nt)
    }
}

/// Tensorizes a spatial basis with shifted Legendre polynomials in time.
/// Tangency is preserved for every `t` because the time factor is scalar.
pub fn tensorize_time(spatial: BasisRef, temporal_degree: usize) -> Result<SpaceTimeBasis> {
    if spatial.kind() != BasisKind::Spatial {
        return Err(Error::UnsupportedBasis(
            "tensorize_time expects a spatial basis".into(),
        ));
    }
    Ok(SpaceTimeBasis {
        spatial,
        temporal_degree,
    })
}

impl VectorBasis for SpaceTimeBasis {
    fn len(&self) -> usize {
        self.spatial.len() * (self.temporal_degree + 1)
    }

    fn kind(&self) -> BasisKind {
        BasisKind::SpaceTime
    }

    fn eval(&self, member: usize, x: Vec2, t: f64) -> Vec2 {
        let (i, k) = self.split(member);
        self.spatial.eval(i, x, 0.0) * shifted_legendre(k, t)
    }

    fn eval_grad(&self, member: usize, x: Vec2, t: f64) -> Mat2 {
        let (i, k) = self.split(member);
        self.spatial.eval_grad(i, x, 0.0) * shifted_legendre(k, t)
    }

    fn eval_second(&self, member: usize, x: Vec2, t: f64) -> SecondDerivs {
        let (i, k) = self.split(member);
        let s = self.spatial.eval_second(i, x, 0.0);
        let l = shifted_legendre(k, t);
        SecondDerivs {
            dxx: s.dxx * l,
            dxy: s.dxy * l,
            dyy: s.dyy * l,
        }
    }
}

/// Maximum normal trace `|phi_i . n|` over all members, facet sample
/// points, and the given times. Zero (up to roundoff) certifies membership
/// in the tangent spaces.
pub fn max_normal_trace(
    basis: &dyn VectorBasis,
    domain: &PolygonalDomain,
    samples_per_facet: usize,
    times: &[f64],
) -> f64 {
    let mut worst: f64 = 0.0;
    for facet in domain.facets() {
        for s in 0..samples_per_facet {
            let x = facet.point_at((s as f64 + 0.5) / samples_per_facet as f64);
            for i in 0..basis.len() {
                for &t in times {
                    let trace = basis.eval(i, x, t).dot(&facet.normal).abs();
                    worst = worst.max(trace);
                }
            }
        }
    }
    worst
}
