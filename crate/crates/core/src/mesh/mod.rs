//! Triangulated surfaces with boundary.

mod construct;
mod geometry;
mod obj;
mod quality;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use construct::{icosphere, make_cap, CapSpec};
pub use geometry::{compute_geometry, fit_height_polynomial, BoundaryFrame, HeightFit, SurfaceGeometry, VertexGeometry};
pub use obj::{read_obj, write_obj, write_obj_string};
pub use quality::{mesh_quality, MeshQuality};

/// Connectivity of a triangle mesh. Half-edge `3 f + k` runs from
/// `faces[f][k]` to `faces[f][(k + 1) % 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub twin: Vec<Option<usize>>,
    pub neighbors: Vec<Vec<usize>>,
    pub vertex_faces: Vec<Vec<usize>>,
    pub boundary: Vec<bool>,
    /// Boundary loops, each ordered along its boundary half-edges.
    pub loops: Vec<Vec<usize>>,
    /// `(previous, next)` along the boundary loop for boundary vertices.
    pub loop_links: Vec<Option<(usize, usize)>>,
    pub ring2: Vec<Vec<usize>>,
    pub ring3: Vec<Vec<usize>>,
}

impl Topology {
    pub fn boundary_edge_count(&self) -> usize {
        self.twin.iter().filter(|t| t.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    topology: Arc<Topology>,
}

impl TriMesh {
    pub fn new(positions: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let topology = build_halfedge(positions.len(), &faces)?;
        Ok(TriMesh { positions, faces, topology: Arc::new(topology) })
    }

    /// Same connectivity, new positions.
    pub fn with_positions(&self, positions: Vec<Vector3<f64>>) -> Self {
        assert_eq!(positions.len(), self.positions.len());
        TriMesh { positions, faces: self.faces.clone(), topology: Arc::clone(&self.topology) }
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.topology.boundary[v]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertex_count()).filter(|&v| self.topology.boundary[v])
    }

    /// Half the cross product of two edges; its norm is the face area.
    pub fn face_vector_area(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.positions[a], self.positions[b], self.positions[c]);
        0.5 * (pb - pa).cross(&(pc - pa))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_vector_area(f).norm()).sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.topology
            .loops
            .iter()
            .map(|lp| (0..lp.len()).map(|i| (self.positions[lp[(i + 1) % lp.len()]] - self.positions[lp[i]]).norm()).sum::<f64>())
            .sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_lengths().fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edge_lengths().fold(f64::INFINITY, f64::min)
    }

    fn edge_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.faces.iter().flat_map(move |f| (0..3).map(move |k| (self.positions[f[(k + 1) % 3]] - self.positions[f[k]]).norm()))
    }
}

/// Builds half-edge adjacency, one-rings, boundary loops and the 2- and
/// 3-ring stencils used by the curvature fits.
pub fn build_halfedge(vertex_count: usize, faces: &[[usize; 3]]) -> Result<Topology> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * faces.len());
    let mut undirected: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * faces.len());
    for (f, face) in faces.iter().enumerate() {
        for &v in face {
            if v >= vertex_count {
                return Err(Error::BadIndex { face: f, vertex: v });
            }
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            return Err(Error::InvalidParams(format!("face {f} repeats a vertex")));
        }
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let count = undirected.entry(key).or_insert(0);
            *count += 1;
            if *count > 2 {
                return Err(Error::NonManifold(key.0, key.1));
            }
            if directed.insert((a, b), 3 * f + k).is_some() {
                return Err(Error::InconsistentOrientation(a, b));
            }
        }
    }

    let mut twin = vec![None; 3 * faces.len()];
    let mut vertex_faces = vec![Vec::new(); vertex_count];
    let mut neighbors = vec![Vec::new(); vertex_count];
    let mut boundary_next: Vec<Option<usize>> = vec![None; vertex_count];
    let mut boundary_prev: Vec<Option<usize>> = vec![None; vertex_count];
    for (f, face) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            vertex_faces[a].push(f);
            neighbors[a].push(b);
            neighbors[b].push(a);
            match directed.get(&(b, a)) {
                Some(&h) => twin[3 * f + k] = Some(h),
                None => {
                    if boundary_next[a].replace(b).is_some() || boundary_prev[b].replace(a).is_some() {
                        return Err(Error::NonManifold(a, b));
                    }
                }
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    let boundary: Vec<bool> = boundary_next.iter().map(Option::is_some).collect();

    let mut loops = Vec::new();
    let mut seen = vec![false; vertex_count];
    for start in 0..vertex_count {
        if !boundary[start] || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut v = start;
        loop {
            seen[v] = true;
            lp.push(v);
            v = match boundary_next[v] {
                Some(n) => n,
                None => return Err(Error::NonManifold(v, v)),
            };
            if v == start {
                break;
            }
            if seen[v] {
                return Err(Error::NonManifold(v, start));
            }
        }
        loops.push(lp);
    }
    let loop_links = (0..vertex_count).map(|v| boundary_prev[v].zip(boundary_next[v])).collect();

    let ring2 = (0..vertex_count).map(|v| k_ring(&neighbors, v, 2)).collect();
    let ring3 = (0..vertex_count).map(|v| k_ring(&neighbors, v, 3)).collect();

    Ok(Topology { twin, neighbors, vertex_faces, boundary, loops, loop_links, ring2, ring3 })
}

/// Vertices within `k` edges of `v` (excluding `v`), ordered by ring then index.
pub fn k_ring(neighbors: &[Vec<usize>], v: usize, k: usize) -> Vec<usize> {
    let mut dist: HashMap<usize, usize> = HashMap::new();
    dist.insert(v, 0);
    let mut queue = VecDeque::from([v]);
    let mut out = Vec::new();
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == k {
            continue;
        }
        for &w in &neighbors[u] {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(du + 1);
                out.push((du + 1, w));
                queue.push_back(w);
            }
        }
    }
    out.sort_unstable();
    out.into_iter().map(|(_, w)| w).collect()
}
