//! Wavefront OBJ (ASCII `v` / `f` records, 1-based indices).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::mesh::TriMesh;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn to_obj_string<T: Real>(mesh: &TriMesh<T>) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(
            out,
            "v {} {} {}",
            v.x.to_f64_lossy(),
            v.y.to_f64_lossy(),
            v.z.to_f64_lossy()
        );
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Parses `v` and `f` records. Polygons are fan-triangulated, `v/vt/vn`
/// index forms and negative (relative) indices are accepted, other records
/// are ignored.
pub fn parse_obj<T: Real>(text: &str) -> Result<TriMesh<T>> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::Parse(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Vector3::new(T::lit(coords[0]), T::lit(coords[1]), T::lit(coords[2])));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(Error::Parse(format!("line {}: index 0 is invalid", lineno + 1)));
                    };
                    if resolved < 0 {
                        return Err(Error::Parse(format!("line {}: index out of range", lineno + 1)));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face needs 3 indices", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn read_obj<T: Real>(path: &Path) -> Result<TriMesh<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

pub fn write_obj<T: Real>(path: &Path, mesh: &TriMesh<T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, to_obj_string(mesh))?;
    Ok(())
}
