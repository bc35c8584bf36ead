//! Bounded Lipschitz polygonal domains in the plane.
//!
//! A domain is an outer counter-clockwise vertex loop plus optional
//! clockwise hole loops. Facets carry the outward unit normal; normals are
//! attributes of facets, never of points, and boundary nodes record the set
//! of adjacent facets.

mod curved;
mod meshio;
mod quadrature;
mod triangulation;

pub use curved::CurvedMap;
pub use quadrature::{max_quadrature_order, QuadPoint};
pub use triangulation::Triangulation;

use crate::error::{Error, Result};
use crate::{Mat2, Vec2};

/// Classification of a point relative to a domain closure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointClass {
    Interior,
    Boundary,
    Exterior,
}

/// One straight boundary segment with its outward unit normal.
#[derive(Clone, Debug)]
pub struct Facet {
    /// 0 for the outer loop, `1 + hole index` for hole loops.
    pub loop_id: usize,
    pub start: Vec2,
    pub end: Vec2,
    /// Unit normal pointing out of the domain (into the hole for hole facets).
    pub normal: Vec2,
}

impl Facet {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Vec2 {
        (self.end - self.start).normalize()
    }

    /// Point at arc-length parameter `s` in `[0, 1]`.
    pub fn point_at(&self, s: f64) -> Vec2 {
        self.start + (self.end - self.start) * s
    }

    /// Distance from `x` to the closed segment.
    pub fn distance(&self, x: Vec2) -> f64 {
        let d = self.end - self.start;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return (x - self.start).norm();
        }
        let t = ((x - self.start).dot(&d) / len2).clamp(0.0, 1.0);
        (x - (self.start + d * t)).norm()
    }
}

/// A bounded polygonal domain, possibly with holes.
#[derive(Clone, Debug)]
pub struct PolygonalDomain {
    outer: Vec<Vec2>,
    holes: Vec<Vec<Vec2>>,
    facets: Vec<Facet>,
}

impl PolygonalDomain {
    /// Builds a domain from an outer loop (counter-clockwise) and hole loops
    /// (clockwise). Loops are given without a repeated closing vertex.
    pub fn new(outer: Vec<Vec2>, holes: Vec<Vec<Vec2>>) -> Result<Self> {
        validate_loop(&outer, "outer")?;
        if signed_area(&outer) <= 0.0 {
            return Err(Error::InvalidDomain(
                "outer loop must be counter-clockwise".into(),
            ));
        }
        for (h, hole) in holes.iter().enumerate() {
            validate_loop(hole, &format!("hole {h}"))?;
            if signed_area(hole) >= 0.0 {
                return Err(Error::InvalidDomain(format!(
                    "hole loop {h} must be clockwise"
                )));
            }
        }

        let domain = PolygonalDomain {
            facets: build_facets(&outer, &holes),
            outer,
            holes,
        };

        // Hole loops must sit strictly inside the outer loop and be
        // pairwise disjoint.
        for (h, hole) in domain.holes.iter().enumerate() {
            for &v in hole {
                if !point_in_loop(&domain.outer, v) {
                    return Err(Error::InvalidDomain(format!(
                        "hole {h} extends outside the outer loop"
                    )));
                }
            }
            if loops_intersect(hole, &domain.outer) {
                return Err(Error::InvalidDomain(format!(
                    "hole {h} crosses the outer loop"
                )));
            }
            for (g, other) in domain.holes.iter().enumerate().skip(h + 1) {
                let crossing = loops_intersect(hole, other)
                    || other.iter().any(|&v| point_in_loop(hole, v))
                    || hole.iter().any(|&v| point_in_loop(other, v));
                if crossing {
                    return Err(Error::InvalidDomain(format!(
                        "holes {h} and {g} are not disjoint"
                    )));
                }
            }
        }
        Ok(domain)
    }

    /// Axis-aligned rectangle `[a, b] x [c, d]` with facets ordered
    /// bottom, right, top, left.
    pub fn rectangle(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        if !(a < b && c < d) {
            return Err(Error::InvalidDomain(format!(
                "degenerate rectangle [{a}, {b}] x [{c}, {d}]"
            )));
        }
        PolygonalDomain::new(
            vec![
                Vec2::new(a, c),
                Vec2::new(b, c),
                Vec2::new(b, d),
                Vec2::new(a, d),
            ],
            vec![],
        )
    }

    pub fn unit_square() -> Self {
        PolygonalDomain::rectangle(0.0, 1.0, 0.0, 1.0).expect("unit square is valid")
    }

    /// Returns `(a, b, c, d)` if the domain is exactly an axis-aligned
    /// rectangle without holes.
    pub fn as_rectangle(&self) -> Option<(f64, f64, f64, f64)> {
        if !self.holes.is_empty() || self.outer.len() != 4 {
            return None;
        }
        let v = &self.outer;
        let axis_aligned = (0..4).all(|i| {
            let d = v[(i + 1) % 4] - v[i];
            d.x == 0.0 || d.y == 0.0
        });
        if !axis_aligned {
            return None;
        }
        let (a, b) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.x), hi.max(p.x))
            });
        let (c, d) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.y), hi.max(p.y))
            });
        Some((a, b, c, d))
    }

    pub fn outer_loop(&self) -> &[Vec2] {
        &self.outer
    }

    pub fn hole_loops(&self) -> &[Vec<Vec2>] {
        &self.holes
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Outward unit normal of facet `facet_id`.
    pub fn outward_normal(&self, facet_id: usize) -> Result<Vec2> {
        self.facets
            .get(facet_id)
            .map(|f| f.normal)
            .ok_or(Error::FacetIndex {
                index: facet_id,
                count: self.facets.len(),
            })
    }

    /// Area enclosed by the outer loop minus the holes.
    pub fn area(&self) -> f64 {
        signed_area(&self.outer) + self.holes.iter().map(|h| signed_area(h)).sum::<f64>()
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.outer {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Bounding-box diagonal, used as the domain length scale.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Classifies `x`: within `tol` of some facet it is `Boundary`;
    /// otherwise even-odd crossing parity decides interior vs exterior.
    pub fn classify(&self, x: Vec2, tol: f64) -> PointClass {
        debug_assert!(tol >= 0.0);
        for f in &self.facets {
            if f.distance(x) <= tol {
                return PointClass::Boundary;
            }
        }
        let mut crossings = point_in_loop(&self.outer, x);
        for hole in &self.holes {
            crossings ^= point_in_loop(hole, x);
        }
        if crossings {
            PointClass::Interior
        } else {
            PointClass::Exterior
        }
    }

    pub fn contains(&self, x: Vec2, tol: f64) -> bool {
        self.classify(x, tol) != PointClass::Exterior
    }

    /// Distance from `x` to the nearest boundary facet.
    pub fn distance_to_boundary(&self, x: Vec2) -> f64 {
        self.facets
            .iter()
            .map(|f| f.distance(x))
            .fold(f64::INFINITY, f64::min)
    }
}

fn validate_loop(vertices: &[Vec2], label: &str) -> Result<()> {
    if vertices.len() < 3 {
        return Err(Error::InvalidDomain(format!(
            "{label} loop needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            if vertices[i] == vertices[j] {
                return Err(Error::InvalidDomain(format!(
                    "{label} loop repeats vertex {i} at index {j}"
                )));
            }
        }
    }
    let n = vertices.len();
    for i in 0..n {
        let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 1)..n {
            // Skip segments sharing a vertex.
            if j == i || (j + 1) % n == i || j == (i + 1) % n {
                continue;
            }
            let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return Err(Error::InvalidDomain(format!(
                    "{label} loop self-intersects between segments {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}

fn build_facets(outer: &[Vec2], holes: &[Vec<Vec2>]) -> Vec<Facet> {
    let mut facets = Vec::new();
    let mut push_loop = |loop_id: usize, vertices: &[Vec2]| {
        let n = vertices.len();
        for i in 0..n {
            let start = vertices[i];
            let end = vertices[(i + 1) % n];
            let d = (end - start).normalize();
            // Rotate the travel direction by -90 degrees. For CCW outer
            // loops and CW hole loops alike, the domain lies on the left of
            // travel, so this points out of the domain.
            facets.push(Facet {
                loop_id,
                start,
                end,
                normal: Vec2::new(d.y, -d.x),
            });
        }
    };
    push_loop(0, outer);
    for (h, hole) in holes.iter().enumerate() {
        push_loop(1 + h, hole);
    }
    facets
}

/// Twice-signed-area shoelace sum, halved.
pub(crate) fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub(crate) fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Signed area of a polygon given by its vertices in order (shoelace).
pub fn quad_signed_area(vertices: &[Vec2]) -> f64 {
    signed_area(vertices)
}

/// Proper or touching intersection of closed segments.
fn segments_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = cross2(b2 - b1, a1 - b1);
    let d2 = cross2(b2 - b1, a2 - b1);
    let d3 = cross2(a2 - a1, b1 - a1);
    let d4 = cross2(a2 - a1, b2 - a1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |p: Vec2, q: Vec2, r: Vec2| -> bool {
        cross2(q - p, r - p) == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on_segment(b1, b2, a1) || on_segment(b1, b2, a2) || on_segment(a1, a2, b1)
        || on_segment(a1, a2, b2)
}

fn loops_intersect(a: &[Vec2], b: &[Vec2]) -> bool {
    let na = a.len();
    let nb = b.len();
    for i in 0..na {
        for j in 0..nb {
            if segments_intersect(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    false
}

/// Even-odd crossing test against a single loop (orientation-independent).
fn point_in_loop(vertices: &[Vec2], x: Vec2) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (vi, vj) = (vertices[i], vertices[j]);
        if (vi.y > x.y) != (vj.y > x.y) {
            let x_cross = vi.x + (x.y - vi.y) * (vj.x - vi.x) / (vj.y - vi.y);
            if x.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// 2x2 spectral norm (largest singular value).
pub fn spectral_norm(m: &Mat2) -> f64 {
    let g = m.transpose() * m;
    let tr = g[(0, 0)] + g[(1, 1)];
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc).max(0.0).sqrt()
}
