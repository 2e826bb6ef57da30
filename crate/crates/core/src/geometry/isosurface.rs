//! Label-volume surface extraction: component filtering, Gaussian smoothing
//! and isosurface polygonization.
//!
//! Each lattice cell is split into six tetrahedra around its main diagonal
//! (the same split in every cell), so neighbouring cells agree on shared
//! faces and the output is a closed, consistently oriented surface without
//! the ambiguous configurations of the 256-case cube table.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use super::volume::VoxelLabelGrid;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Extraction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsoParams {
    /// Isosurface level on the smoothed binary mask.
    pub iso: f64,
    /// Gaussian standard deviation in voxels (0 disables smoothing).
    pub sigma: f64,
    /// Lattice sampling stride in voxels.
    pub step: usize,
    /// Connected components smaller than this are discarded.
    pub min_voxels: usize,
}

impl IsoParams {
    pub fn organ() -> Self {
        Self {
            iso: 0.5,
            sigma: 1.0,
            step: 2,
            min_voxels: 5000,
        }
    }

    pub fn skin() -> Self {
        Self {
            iso: 0.45,
            sigma: 1.2,
            step: 2,
            min_voxels: 10000,
        }
    }
}

impl Default for IsoParams {
    fn default() -> Self {
        Self::organ()
    }
}

/// Extracts the surface of `label` as a mesh in world centimeters.
pub fn marching_cubes<T: Real>(grid: &VoxelLabelGrid, label: u32, params: &IsoParams) -> Result<TriMesh<T>> {
    grid.validate()?;
    if params.step == 0 {
        return Err(Error::InvalidConfig("step must be at least 1".into()));
    }
    if !(params.sigma >= 0.0) {
        return Err(Error::InvalidConfig("sigma must be non-negative".into()));
    }
    let mask: Vec<bool> = grid.labels.iter().map(|&l| l == label).collect();
    let present = mask.iter().filter(|&&m| m).count();
    if present == 0 {
        return Err(Error::EmptyResult(format!("label {label} is absent")));
    }
    let kept = filter_components(&mask, grid.dims, params.min_voxels);
    if !kept.iter().any(|&m| m) {
        return Err(Error::EmptyResult(format!(
            "every component of label {label} is below {} voxels",
            params.min_voxels
        )));
    }

    let radius = kernel_radius(params.sigma);
    let pad = radius + params.step + 1;
    let pdims = [
        grid.dims[0] + 2 * pad,
        grid.dims[1] + 2 * pad,
        grid.dims[2] + 2 * pad,
    ];
    let mut field = vec![0.0f64; pdims[0] * pdims[1] * pdims[2]];
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                if kept[grid.index(i, j, k)] {
                    field[(i + pad) + pdims[0] * ((j + pad) + pdims[1] * (k + pad))] = 1.0;
                }
            }
        }
    }
    if params.sigma > 0.0 {
        gaussian_blur(&mut field, pdims, params.sigma);
    }

    let step = params.step;
    let ndims = [
        (pdims[0] - 1) / step + 1,
        (pdims[1] - 1) / step + 1,
        (pdims[2] - 1) / step + 1,
    ];
    let node_value = |n: [usize; 3]| {
        let (x, y, z) = (n[0] * step, n[1] * step, n[2] * step);
        field[x + pdims[0] * (y + pdims[1] * z)]
    };
    let node_world = |n: [usize; 3]| {
        let ijk = Vector3::new(
            (n[0] * step) as f64 - pad as f64,
            (n[1] * step) as f64 - pad as f64,
            (n[2] * step) as f64 - pad as f64,
        );
        grid.voxel_to_world_cm(&ijk)
    };
    let node_id = |n: [usize; 3]| n[0] + ndims[0] * (n[1] + ndims[1] * n[2]);

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    const CORNERS: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ];
    const TETS: [[usize; 4]; 6] = [
        [0, 6, 1, 2],
        [0, 6, 2, 3],
        [0, 6, 3, 7],
        [0, 6, 7, 4],
        [0, 6, 4, 5],
        [0, 6, 5, 1],
    ];

    for cz in 0..ndims[2] - 1 {
        for cy in 0..ndims[1] - 1 {
            for cx in 0..ndims[0] - 1 {
                let nodes: [[usize; 3]; 8] =
                    CORNERS.map(|c| [cx + c[0], cy + c[1], cz + c[2]]);
                let values = nodes.map(node_value);
                let inside_count = values.iter().filter(|&&v| v > params.iso).count();
                if inside_count == 0 || inside_count == 8 {
                    continue;
                }
                for tet in TETS {
                    let tn = tet.map(|c| nodes[c]);
                    let tv = tet.map(|c| values[c]);
                    let inside: Vec<usize> = (0..4).filter(|&a| tv[a] > params.iso).collect();
                    let outside: Vec<usize> = (0..4).filter(|&a| tv[a] <= params.iso).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let mut vert = |a: usize, b: usize| {
                        let (ia, ib) = (node_id(tn[a]), node_id(tn[b]));
                        let key = (ia.min(ib), ia.max(ib));
                        *edge_vertex.entry(key).or_insert_with(|| {
                            // a is inside, b outside
                            let t = ((params.iso - tv[a]) / (tv[b] - tv[a])).clamp(0.0, 1.0);
                            let pa = node_world(tn[a]);
                            let pb = node_world(tn[b]);
                            vertices.push(pa + (pb - pa) * t);
                            vertices.len() - 1
                        })
                    };
                    let tris: Vec<[usize; 3]> = match (inside.len(), outside.len()) {
                        (1, 3) => {
                            let i = inside[0];
                            vec![[vert(i, outside[0]), vert(i, outside[1]), vert(i, outside[2])]]
                        }
                        (3, 1) => {
                            let o = outside[0];
                            vec![[vert(inside[0], o), vert(inside[1], o), vert(inside[2], o)]]
                        }
                        _ => {
                            let (i0, i1) = (inside[0], inside[1]);
                            let (o0, o1) = (outside[0], outside[1]);
                            let a = vert(i0, o0);
                            let b = vert(i0, o1);
                            let c = vert(i1, o1);
                            let d = vert(i1, o0);
                            vec![[a, b, c], [a, c, d]]
                        }
                    };
                    let cin = inside
                        .iter()
                        .fold(Vector3::zeros(), |acc, &a| acc + node_world(tn[a]))
                        / inside.len() as f64;
                    let cout = outside
                        .iter()
                        .fold(Vector3::zeros(), |acc, &a| acc + node_world(tn[a]))
                        / outside.len() as f64;
                    let outward = cout - cin;
                    for mut tri in tris {
                        let n = (vertices[tri[1]] - vertices[tri[0]])
                            .cross(&(vertices[tri[2]] - vertices[tri[0]]));
                        if n.dot(&outward) < 0.0 {
                            tri.swap(1, 2);
                        }
                        faces.push(tri);
                    }
                }
            }
        }
    }

    let vertices: Vec<Vector3<T>> = vertices
        .into_iter()
        .map(|v| Vector3::new(T::lit(v.x), T::lit(v.y), T::lit(v.z)))
        .collect();
    let mesh = TriMesh::new(vertices, faces)?
        .without_small_faces(T::lit(1e-12))
        .compacted();
    if mesh.face_count() == 0 {
        return Err(Error::EmptyResult(format!(
            "no isosurface at level {} for label {label}",
            params.iso
        )));
    }
    let report = mesh.topology_report();
    if !report.is_closed_manifold() {
        log::warn!(
            "surface for label {label} is not a closed manifold ({} boundary, {} non-manifold edges)",
            report.boundary_edges,
            report.non_manifold_edges
        );
    }
    Ok(mesh)
}

/// Keeps every 26-connected component with at least `min_voxels` voxels.
pub fn filter_components(mask: &[bool], dims: [usize; 3], min_voxels: usize) -> Vec<bool> {
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let mut comp = vec![usize::MAX; mask.len()];
    let mut keep = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut members = Vec::new();
    let mut next = 0usize;
    for start in 0..mask.len() {
        if !mask[start] || comp[start] != usize::MAX {
            continue;
        }
        members.clear();
        comp[start] = next;
        stack.push(start);
        while let Some(v) = stack.pop() {
            members.push(v);
            let i = v % dims[0];
            let j = (v / dims[0]) % dims[1];
            let k = v / (dims[0] * dims[1]);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if ni < 0 || nj < 0 || nk < 0 {
                            continue;
                        }
                        let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                        if ni >= dims[0] || nj >= dims[1] || nk >= dims[2] {
                            continue;
                        }
                        let n = idx(ni, nj, nk);
                        if mask[n] && comp[n] == usize::MAX {
                            comp[n] = next;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        if members.len() >= min_voxels {
            for &m in &members {
                keep[m] = true;
            }
        }
        next += 1;
    }
    keep
}

/// Truncation radius matching the common 4σ convention.
fn kernel_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        0
    } else {
        (4.0 * sigma + 0.5) as usize
    }
}

/// Separable Gaussian blur with zero boundary.
pub fn gaussian_blur(field: &mut [f64], dims: [usize; 3], sigma: f64) {
    let r = kernel_radius(sigma) as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut tmp = vec![0.0; field.len()];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let stride = strides[axis];
        for (idx, out) in tmp.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as i64;
            let mut acc = 0.0;
            for (w, off) in kernel.iter().zip(-r..=r) {
                let p = pos + off;
                if p >= 0 && p < n {
                    acc += w * field[(idx as i64 + off * stride as i64) as usize];
                }
            }
            *out = acc;
        }
        field.copy_from_slice(&tmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_grid(n: usize, lo: usize, hi: usize) -> VoxelLabelGrid {
        let mut labels = vec![0u32; n * n * n];
        for k in lo..hi {
            for j in lo..hi {
                for i in lo..hi {
                    labels[i + n * (j + n * k)] = 1;
                }
            }
        }
        VoxelLabelGrid::with_spacing([n; 3], [1.0; 3], labels).unwrap()
    }

    #[test]
    fn empty_grid_is_an_error() {
        let g = VoxelLabelGrid::with_spacing([4, 4, 4], [1.0; 3], vec![0; 64]).unwrap();
        assert!(matches!(
            marching_cubes::<f64>(&g, 1, &IsoParams::organ()),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn small_components_are_dropped() {
        let g = block_grid(12, 2, 6);
        let p = IsoParams {
            min_voxels: 100,
            step: 1,
            ..IsoParams::organ()
        };
        assert!(matches!(marching_cubes::<f64>(&g, 1, &p), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn components_are_counted_separately() {
        let mut mask = vec![false; 27 * 9];
        let dims = [27, 3, 3];
        for i in 0..4 {
            mask[i] = true;
        }
        for i in 10..12 {
            mask[i] = true;
        }
        let kept = filter_components(&mask, dims, 3);
        assert_eq!(kept.iter().filter(|&&k| k).count(), 4);
    }

    #[test]
    fn block_surface_is_closed_and_outward() {
        let g = block_grid(16, 4, 12);
        let p = IsoParams {
            min_voxels: 10,
            step: 1,
            ..IsoParams::organ()
        };
        let m: TriMesh<f64> = marching_cubes(&g, 1, &p).unwrap();
        assert!(m.topology_report().is_closed_manifold());
        assert!(m.signed_volume() > 0.0);
        for f in 0..m.face_count() {
            assert!(m.face_area(f) > 1e-12);
        }
        assert!(m.faces().iter().all(|f| f.iter().all(|&i| i < m.vertex_count())));
    }

    #[test]
    fn blur_preserves_mass() {
        let dims = [20, 20, 20];
        let mut f = vec![0.0; 8000];
        f[10 + 20 * (10 + 20 * 10)] = 1.0;
        gaussian_blur(&mut f, dims, 1.2);
        let s: f64 = f.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
