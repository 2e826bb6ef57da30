use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;

use super::aabb::Aabb;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Triangle surface mesh in centimeters.
///
/// Faces always reference valid vertices and have three distinct indices;
/// faces violating the latter are dropped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T: Real> {
    vertices: Vec<Vector3<T>>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<Vector3<T>>>,
}

impl<T: Real> Default for TriMesh<T> {
    fn default() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: None,
        }
    }
}

/// A point on a mesh surface expressed as a face and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample<T: Real> {
    pub face: usize,
    pub bary: [T; 3],
}

/// Edge incidence summary used for the manifold check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopologyReport {
    pub edges: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

impl TopologyReport {
    pub fn is_closed_manifold(&self) -> bool {
        self.boundary_edges == 0 && self.non_manifold_edges == 0
    }
}

impl<T: Real> TriMesh<T> {
    /// Validates coordinates and indices, dropping faces with repeated indices.
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!(
                "face {f:?} references a vertex out of range (vertex count {n})"
            )));
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        if faces.len() != before {
            log::debug!("dropped {} degenerate faces", before - faces.len());
        }
        Ok(Self {
            vertices,
            faces,
            normals: None,
        })
    }

    /// Attaches per-vertex normals, which must be unit length within 1e-6.
    pub fn with_normals(mut self, normals: Vec<Vector3<T>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        let tol = T::lit(1e-6);
        if let Some(i) = normals.iter().position(|n| (n.norm() - T::one()).abs() > tol) {
            return Err(Error::InvalidMesh(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<T>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            normals: None,
        })
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices<F: Fn(&Vector3<T>) -> Vector3<T>>(&self, f: F) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: None,
        }
    }

    /// Disjoint union of several meshes.
    pub fn concat(parts: &[TriMesh<T>]) -> Self {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for p in parts {
            let base = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            faces.extend(p.faces.iter().map(|f| f.map(|i| i + base)));
        }
        Self {
            vertices,
            faces,
            normals: None,
        }
    }

    pub fn translated(&self, t: &Vector3<T>) -> Self {
        self.map_vertices(|v| v + t)
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vector3<T>]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Vertex mean; zero for an empty mesh.
    pub fn centroid(&self) -> Vector3<T> {
        centroid(&self.vertices)
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vector3<T> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> T {
        self.face_cross(f).norm() * T::lit(0.5)
    }

    pub fn area(&self) -> T {
        (0..self.faces.len()).fold(T::zero(), |acc, f| acc + self.face_area(f))
    }

    /// Signed enclosed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> T {
        let sixth = T::one() / T::lit(6.0);
        self.faces.iter().fold(T::zero(), |acc, &[a, b, c]| {
            acc + self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) * sixth
        })
    }

    pub fn aabb(&self) -> Aabb<T> {
        Aabb::from_points(&self.vertices)
    }

    /// Area-weighted unit vertex normals; isolated vertices get a zero vector.
    pub fn vertex_normals(&self) -> Vec<Vector3<T>> {
        if let Some(n) = &self.normals {
            return n.clone();
        }
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let c = self.face_cross(f);
            for &i in face {
                acc[i] += c;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > T::zero() {
                    n / len
                } else {
                    n
                }
            })
            .collect()
    }

    /// Unique undirected edges as sorted index pairs, in first-seen order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                seen.entry(key).or_insert_with(|| {
                    out.push(key);
                });
            }
        }
        out
    }

    /// Pairs of faces sharing an edge. Edges with more than two incident
    /// faces contribute every pair.
    pub fn adjacent_face_pairs(&self) -> Vec<[usize; 2]> {
        let mut by_edge: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (f, face) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                let entry = by_edge.entry(key).or_default();
                if entry.is_empty() {
                    order.push(key);
                }
                entry.push(f);
            }
        }
        let mut pairs = Vec::new();
        for key in order {
            let fs = &by_edge[&key];
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    pairs.push([fs[i], fs[j]]);
                }
            }
        }
        pairs
    }

    /// Sorted one-ring neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for [a, b] in self.edges() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    pub fn topology_report(&self) -> TopologyReport {
        let mut counts: HashMap<[usize; 2], usize> = HashMap::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                *counts.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        TopologyReport {
            edges: counts.len(),
            boundary_edges: counts.values().filter(|&&c| c == 1).count(),
            non_manifold_edges: counts.values().filter(|&&c| c > 2).count(),
        }
    }

    /// Drops vertices not referenced by any face, reindexing faces.
    pub fn compacted(&self) -> Self {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let faces = self
            .faces
            .iter()
            .map(|face| {
                face.map(|i| {
                    if remap[i] == usize::MAX {
                        remap[i] = vertices.len();
                        vertices.push(self.vertices[i]);
                    }
                    remap[i]
                })
            })
            .collect();
        Self {
            vertices,
            faces,
            normals: None,
        }
    }

    /// Removes faces whose area is at or below `min_area`.
    pub fn without_small_faces(&self, min_area: T) -> Self {
        let faces = (0..self.faces.len())
            .filter(|&f| self.face_area(f) > min_area)
            .map(|f| self.faces[f])
            .collect();
        Self {
            vertices: self.vertices.clone(),
            faces,
            normals: None,
        }
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<SurfaceSample<T>> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0f64;
        for f in 0..self.faces.len() {
            total += self.face_area(f).to_f64_lossy();
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let face = cumulative.partition_point(|&c| c <= u).min(self.faces.len() - 1);
                let r1: f64 = rng.random::<f64>();
                let r2: f64 = rng.random::<f64>();
                let s = r1.sqrt();
                let b0 = 1.0 - s;
                let b1 = s * (1.0 - r2);
                let b2 = s * r2;
                SurfaceSample {
                    face,
                    bary: [T::lit(b0), T::lit(b1), T::lit(b2)],
                }
            })
            .collect()
    }

    pub fn sample_position(&self, s: &SurfaceSample<T>) -> Vector3<T> {
        sample_position(&self.vertices, &self.faces, s)
    }
}

pub(crate) fn sample_position<T: Real>(
    vertices: &[Vector3<T>],
    faces: &[[usize; 3]],
    s: &SurfaceSample<T>,
) -> Vector3<T> {
    let [a, b, c] = faces[s.face];
    vertices[a] * s.bary[0] + vertices[b] * s.bary[1] + vertices[c] * s.bary[2]
}

/// Vertex mean; zero for an empty slice.
pub fn centroid<T: Real>(points: &[Vector3<T>]) -> Vector3<T> {
    if points.is_empty() {
        return Vector3::zeros();
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
    sum / T::from_count(points.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn rejects_out_of_range_and_nan() {
        let v = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]]).is_err());
        let mut bad = v.clone();
        bad[1].x = f64::NAN;
        assert!(TriMesh::new(bad, vec![]).is_err());
    }

    #[test]
    fn drops_degenerate_faces() {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 0, 1]]).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn normals_must_be_unit() {
        let m = shapes::unit_cube::<f64>();
        let n = vec![Vector3::new(0.0, 0.0, 2.0); m.vertex_count()];
        assert!(m.clone().with_normals(n).is_err());
        let n = m.vertex_normals();
        assert!(m.with_normals(n).is_ok());
    }

    #[test]
    fn cube_measures() {
        let m = shapes::unit_cube::<f64>();
        assert!((m.area() - 6.0).abs() < 1e-12);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
        assert!(m.topology_report().is_closed_manifold());
        assert_eq!(m.edges().len(), 18);
        assert!(m.centroid().norm() < 1e-12);
    }

    #[test]
    fn samples_lie_on_surface() {
        use rand::SeedableRng;
        let m = shapes::icosphere::<f64>(2).map_vertices(|v| v * 3.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for s in m.sample_surface(200, &mut rng) {
            let p = m.sample_position(&s);
            assert!(p.norm() <= 3.0 + 1e-9 && p.norm() > 2.5);
            assert!((s.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
