//! Closed primitive meshes used by the phantom generator and tests.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::mesh::TriMesh;
use crate::scalar::Real;

/// Axis-aligned unit cube centered at the origin, outward winding.
pub fn unit_cube<T: Real>() -> TriMesh<T> {
    box_mesh(
        Vector3::repeat(T::lit(-0.5)),
        Vector3::repeat(T::lit(0.5)),
    )
}

pub fn box_mesh<T: Real>(min: Vector3<T>, max: Vector3<T>) -> TriMesh<T> {
    let v = |x: bool, y: bool, z: bool| {
        Vector3::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriMesh::new(vertices, faces).expect("box is valid")
}

/// Unit icosphere with `subdivisions` rounds of 4-to-1 splitting.
///
/// The vertex set is symmetric under reflection through each coordinate
/// plane, so its second-moment matrix is diagonal.
pub fn icosphere<T: Real>(subdivisions: usize) -> TriMesh<T> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<Vector3<f64>> = raw
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts
        .into_iter()
        .map(|p| Vector3::new(T::lit(p.x), T::lit(p.y), T::lit(p.z)))
        .collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Latitude/longitude unit sphere with poles on the ±z axis.
pub fn uv_sphere<T: Real>(rings: usize, segments: usize) -> TriMesh<T> {
    let rings = rings.max(2);
    let segments = segments.max(3);
    let mut vertices = vec![Vector3::new(T::zero(), T::zero(), T::one())];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(
                T::lit(theta.sin() * phi.cos()),
                T::lit(theta.sin() * phi.sin()),
                T::lit(theta.cos()),
            ));
        }
    }
    let south = vertices.len();
    vertices.push(Vector3::new(T::zero(), T::zero(), -T::one()));
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriMesh::new(vertices, faces).expect("uv sphere is valid")
}

/// Axis-aligned ellipsoid built from an icosphere.
pub fn ellipsoid<T: Real>(center: Vector3<T>, radii: Vector3<T>, subdivisions: usize) -> TriMesh<T> {
    icosphere::<T>(subdivisions).map_vertices(|v| v.component_mul(&radii) + center)
}

/// Flat square grid in the plane z = `height`, spanning `[-half, half]²`,
/// normals facing +z.
pub fn plane_grid<T: Real>(cells: usize, half: T, height: T) -> TriMesh<T> {
    let cells = cells.max(1);
    let n = cells + 1;
    let step = half * T::lit(2.0) / T::from_count(cells);
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push(Vector3::new(
                -half + step * T::from_count(i),
                -half + step * T::from_count(j),
                height,
            ));
        }
    }
    let mut faces = Vec::with_capacity(cells * cells * 2);
    for j in 0..cells {
        for i in 0..cells {
            let a = j * n + i;
            faces.push([a, a + 1, a + n + 1]);
            faces.push([a, a + n + 1, a + n]);
        }
    }
    TriMesh::new(vertices, faces).expect("grid is valid")
}
