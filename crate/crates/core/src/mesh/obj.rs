use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::TriMesh;
use crate::error::{Error, Result};

/// Renders `mesh` as Wavefront OBJ; each `comments` entry becomes a `#` line.
pub fn write_obj_string(mesh: &TriMesh, comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    for p in &mesh.positions {
        let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(mesh: &TriMesh, path: &Path, comments: &[String]) -> Result<()> {
    fs::write(path, write_obj_string(mesh, comments)).map_err(|e| Error::io(path, e))
}

/// Reads vertices and triangular faces; other records are ignored.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub(crate) fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut it = line.split_whitespace();
        let bad = |msg: &str| Error::Parse { line: line_no, msg: msg.to_string() };
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad vertex coordinate"))?;
                if c.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                positions.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad face index"))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad("faces must be triangles with 1-based indices"));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    TriMesh::new(positions, faces)
}
