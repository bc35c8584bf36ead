//! Line-oriented text mesh files.
//!
//! ```text
//! NODES
//! <id> <x> <y>
//! TRIANGLES
//! <id> <n1> <n2> <n3>
//! BOUNDARY
//! <node_id> <facet_id>
//! ```
//!
//! Boundary lines may repeat a node id once per adjacent facet.

use super::Triangulation;
use crate::error::{Error, Result};
use crate::io::fmt_g17;
use crate::Vec2;
use std::path::Path;

impl Triangulation {
    pub fn from_mesh_text(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Nodes,
            Triangles,
            Boundary,
        }
        let mut section = Section::None;
        let mut nodes: Vec<(usize, Vec2)> = Vec::new();
        let mut triangles: Vec<(usize, [usize; 3])> = Vec::new();
        let mut boundary: Vec<(usize, usize)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "NODES" => {
                    section = Section::Nodes;
                    continue;
                }
                "TRIANGLES" => {
                    section = Section::Triangles;
                    continue;
                }
                "BOUNDARY" => {
                    section = Section::Boundary;
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let ctx = |what: &str| {
                Error::Parse(format!("mesh line {}: {what}: {line:?}", lineno + 1))
            };
            match section {
                Section::None => {
                    return Err(ctx("data before a section header"));
                }
                Section::Nodes => {
                    if fields.len() != 3 {
                        return Err(ctx("expected `id x y`"));
                    }
                    let id: usize = fields[0].parse().map_err(|_| ctx("bad node id"))?;
                    let x: f64 = fields[1].parse().map_err(|_| ctx("bad x"))?;
                    let y: f64 = fields[2].parse().map_err(|_| ctx("bad y"))?;
                    nodes.push((id, Vec2::new(x, y)));
                }
                Section::Triangles => {
                    if fields.len() != 4 {
                        return Err(ctx("expected `id n1 n2 n3`"));
                    }
                    let id: usize = fields[0].parse().map_err(|_| ctx("bad triangle id"))?;
                    let mut tri = [0usize; 3];
                    for (k, f) in fields[1..].iter().enumerate() {
                        tri[k] = f.parse().map_err(|_| ctx("bad node index"))?;
                    }
                    triangles.push((id, tri));
                }
                Section::Boundary => {
                    if fields.len() != 2 {
                        return Err(ctx("expected `node_id facet_id`"));
                    }
                    let node: usize = fields[0].parse().map_err(|_| ctx("bad node id"))?;
                    let facet: usize = fields[1].parse().map_err(|_| ctx("bad facet id"))?;
                    boundary.push((node, facet));
                }
            }
        }

        nodes.sort_by_key(|&(id, _)| id);
        for (k, &(id, _)) in nodes.iter().enumerate() {
            if id != k {
                return Err(Error::InvalidMesh(format!(
                    "node ids must be 0..n contiguous; missing or duplicate id near {id}"
                )));
            }
        }
        triangles.sort_by_key(|&(id, _)| id);
        let node_points: Vec<Vec2> = nodes.into_iter().map(|(_, p)| p).collect();
        let tri_indices: Vec<[usize; 3]> = triangles.into_iter().map(|(_, t)| t).collect();
        let mut flags = vec![Vec::new(); node_points.len()];
        for (node, facet) in boundary {
            if node >= node_points.len() {
                return Err(Error::InvalidMesh(format!(
                    "boundary entry references node {node} out of {}",
                    node_points.len()
                )));
            }
            if !flags[node].contains(&facet) {
                flags[node].push(facet);
            }
        }
        Triangulation::new(node_points, tri_indices, flags)
    }

    pub fn to_mesh_text(&self) -> String {
        let mut out = String::from("NODES\n");
        for (i, p) in self.nodes().iter().enumerate() {
            out.push_str(&format!("{i} {} {}\n", fmt_g17(p.x), fmt_g17(p.y)));
        }
        out.push_str("TRIANGLES\n");
        for (i, t) in self.triangles().iter().enumerate() {
            out.push_str(&format!("{i} {} {} {}\n", t[0], t[1], t[2]));
        }
        out.push_str("BOUNDARY\n");
        for i in 0..self.nodes().len() {
            for &f in self.boundary_facets(i) {
                out.push_str(&format!("{i} {f}\n"));
            }
        }
        out
    }

    pub fn read_mesh_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Triangulation::from_mesh_text(&text)
    }

    pub fn write_mesh_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_mesh_text())?;
        Ok(())
    }
}
