//! Conforming triangulations of polygonal domains.

use super::{cross2, PointClass, PolygonalDomain, QuadPoint};
use crate::error::{Error, Result};
use crate::Vec2;
use std::collections::HashMap;

/// A conforming triangle mesh. Boundary nodes record the ids of every
/// adjacent domain facet (two or more at corners).
#[derive(Clone, Debug)]
pub struct Triangulation {
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    /// Per-node list of adjacent facet ids; empty for interior nodes.
    boundary: Vec<Vec<usize>>,
}

impl Triangulation {
    pub fn new(
        nodes: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if boundary.len() != nodes.len() {
            return Err(Error::InvalidMesh(format!(
                "boundary table has {} entries for {} nodes",
                boundary.len(),
                nodes.len()
            )));
        }
        let tri = Triangulation {
            nodes,
            triangles,
            boundary,
        };
        tri.check_structure()?;
        Ok(tri)
    }

    /// Structured triangulation of an axis-aligned rectangle domain:
    /// `nx x ny` cells, each split into two positively oriented triangles.
    pub fn structured_rectangle(domain: &PolygonalDomain, nx: usize, ny: usize) -> Result<Self> {
        let (a, b, c, d) = domain.as_rectangle().ok_or_else(|| {
            Error::InvalidMesh("structured triangulation requires an axis-aligned rectangle".into())
        })?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh("need at least one cell per direction".into()));
        }
        let dx = (b - a) / nx as f64;
        let dy = (d - c) / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { b } else { a + i as f64 * dx };
                let y = if j == ny { d } else { c + j as f64 * dy };
                nodes.push(Vec2::new(x, y));
                let mut facets = Vec::new();
                // Rectangle facets are ordered bottom, right, top, left.
                if j == 0 {
                    facets.push(0);
                }
                if i == nx {
                    facets.push(1);
                }
                if j == ny {
                    facets.push(2);
                }
                if i == 0 {
                    facets.push(3);
                }
                boundary.push(facets);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Triangulation::new(nodes, triangles, boundary)
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_facets(&self, node: usize) -> &[usize] {
        &self.boundary[node]
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec2; 3] {
        let [i, j, k] = self.triangles[t];
        [self.nodes[i], self.nodes[j], self.nodes[k]]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| triangle_area(self.triangle_vertices(t)))
            .sum()
    }

    /// Symmetric triangle quadrature of the given order over the mesh.
    /// Weights sum to the mesh area; the rule is exact for polynomials of
    /// total degree `order` on each triangle.
    pub fn quadrature(&self, order: usize) -> Result<Vec<QuadPoint>> {
        let rule = super::quadrature::triangle_rule(order)?;
        let mut points = Vec::with_capacity(self.triangles.len() * rule.len());
        for t in 0..self.triangles.len() {
            let [v0, v1, v2] = self.triangle_vertices(t);
            let area = triangle_area([v0, v1, v2]);
            for &(bary, w) in rule {
                points.push(QuadPoint {
                    point: v0 * bary[0] + v1 * bary[1] + v2 * bary[2],
                    weight: w * area,
                });
            }
        }
        Ok(points)
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {t} references node {i} out of {n}"
                    )));
                }
            }
            if triangle_area(self.triangle_vertices(t)) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is not positively oriented"
                )));
            }
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        if let Some((edge, count)) = edge_count.iter().find(|&(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!(
                "edge {edge:?} is shared by {count} triangles; mesh is not conforming"
            )));
        }
        Ok(())
    }

    /// Checks the mesh against its domain: area match within `1e-12`
    /// relative, quadrature points strictly inside, and boundary flags
    /// consistent with the facets they claim.
    pub fn validate(&self, domain: &PolygonalDomain) -> Result<()> {
        let mesh_area = self.area();
        let domain_area = domain.area();
        if (mesh_area - domain_area).abs() > 1e-12 * domain_area.abs() {
            return Err(Error::InvalidMesh(format!(
                "mesh area {mesh_area} does not match domain area {domain_area}"
            )));
        }
        for (i, facets) in self.boundary.iter().enumerate() {
            for &f in facets {
                if f >= domain.facets().len() {
                    return Err(Error::InvalidMesh(format!(
                        "node {i} claims facet {f} out of {}",
                        domain.facets().len()
                    )));
                }
                let dist = domain.facets()[f].distance(self.nodes[i]);
                if dist > 1e-9 * domain.diameter().max(1.0) {
                    return Err(Error::InvalidMesh(format!(
                        "node {i} lies {dist:.3e} away from its claimed facet {f}"
                    )));
                }
            }
        }
        for q in self.quadrature(1)? {
            if domain.classify(q.point, 1e-12) == PointClass::Exterior {
                return Err(Error::InvalidMesh(format!(
                    "quadrature point ({}, {}) is outside the domain",
                    q.point.x, q.point.y
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn triangle_area([a, b, c]: [Vec2; 3]) -> f64 {
    0.5 * cross2(b - a, c - a)
}
