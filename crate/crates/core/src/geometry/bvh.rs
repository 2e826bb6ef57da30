//! Bounding-volume hierarchy over mesh triangles for ray and distance queries.

use nalgebra::Vector3;

use super::aabb::Aabb;
use super::mesh::TriMesh;
use super::primitives::{closest_point_on_triangle, ray_triangle, segment_triangle_distance_squared};
use crate::error::{Error, Result};
use crate::scalar::Real;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit<T: Real> {
    pub point: Vector3<T>,
    pub face: usize,
    pub lambda: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint<T: Real> {
    pub point: Vector3<T>,
    pub face: usize,
    pub distance_squared: T,
}

#[derive(Clone, Debug)]
enum Node<T: Real> {
    Leaf { bounds: Aabb<T>, start: usize, end: usize },
    Inner { bounds: Aabb<T>, left: usize, right: usize },
}

impl<T: Real> Node<T> {
    fn bounds(&self) -> &Aabb<T> {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Immutable triangle hierarchy; shareable across threads.
#[derive(Clone, Debug)]
pub struct TriangleBvh<T: Real> {
    triangles: Vec<[Vector3<T>; 3]>,
    /// Original face index of each entry in `triangles`.
    face_ids: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> TriangleBvh<T> {
    pub fn build(mesh: &TriMesh<T>) -> Self {
        let n = mesh.face_count();
        let mut order: Vec<usize> = (0..n).collect();
        let boxes: Vec<Aabb<T>> = (0..n).map(|f| Aabb::from_points(&mesh.triangle(f))).collect();
        let centers: Vec<Vector3<T>> = boxes.iter().map(|b| b.center()).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&mut nodes, &mut order, 0, n, &boxes, &centers);
        }
        Self {
            triangles: order.iter().map(|&f| mesh.triangle(f)).collect(),
            face_ids: order,
            nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Nearest intersection with `λ ≥ 0`; ties go to the smaller face index.
    pub fn first_hit(&self, origin: &Vector3<T>, dir: &Vector3<T>) -> Option<RayHit<T>> {
        if self.nodes.is_empty() {
            return None;
        }
        let inf = T::max_value().expect("bounded float");
        let mut best: Option<(T, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let limit = best.map_or(inf, |b| b.0);
            if self.nodes[i].bounds().ray_entry(origin, dir, limit).is_none() {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for k in *start..*end {
                        if let Some(lambda) = ray_triangle(origin, dir, &self.triangles[k]) {
                            let face = self.face_ids[k];
                            let better = match best {
                                None => true,
                                Some((bl, bf)) => lambda < bl || (lambda == bl && face < bf),
                            };
                            if better {
                                best = Some((lambda, face));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best.map(|(lambda, face)| RayHit {
            point: origin + dir * lambda,
            face,
            lambda,
        })
    }

    /// Closest surface point to `p`; ties go to the smaller face index.
    pub fn closest_point(&self, p: &Vector3<T>) -> Option<ClosestPoint<T>> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestPoint<T>> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if let Some(b) = &best {
                if node.bounds().distance_squared_to_point(p) > b.distance_squared {
                    continue;
                }
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for k in *start..*end {
                        let q = closest_point_on_triangle(p, &self.triangles[k]);
                        let d2 = (q - p).norm_squared();
                        let face = self.face_ids[k];
                        let better = match &best {
                            None => true,
                            Some(b) => d2 < b.distance_squared || (d2 == b.distance_squared && face < b.face),
                        };
                        if better {
                            best = Some(ClosestPoint {
                                point: q,
                                face,
                                distance_squared: d2,
                            });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared_to_point(p);
                    let dr = self.nodes[*right].bounds().distance_squared_to_point(p);
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    /// Minimum distance between segment `[a, b]` and the surface.
    pub fn segment_distance(&self, a: &Vector3<T>, b: &Vector3<T>) -> Option<T> {
        if self.nodes.is_empty() {
            return None;
        }
        let seg_box = Aabb::from_points([a, b]);
        let mut best = T::max_value().expect("bounded float");
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds().distance_squared_to_box(&seg_box) > best {
                continue;
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for k in *start..*end {
                        let d2 = segment_triangle_distance_squared(a, b, &self.triangles[k]);
                        if d2 < best {
                            best = d2;
                            if best == T::zero() {
                                return Some(T::zero());
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        Some(best.sqrt())
    }
}

fn build_node<T: Real>(
    nodes: &mut Vec<Node<T>>,
    order: &mut [usize],
    start: usize,
    end: usize,
    boxes: &[Aabb<T>],
    centers: &[Vector3<T>],
) -> usize {
    let bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |acc, &f| acc.union(&boxes[f]));
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let centroid_box = Aabb::from_points(order[start..end].iter().map(|&f| &centers[f]));
    let axis = centroid_box.longest_axis();
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centers[a][axis]
            .partial_cmp(&centers[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    nodes.push(Node::Inner {
        bounds,
        left: 0,
        right: 0,
    });
    let left = build_node(nodes, order, start, mid, boxes, centers);
    let right = build_node(nodes, order, mid, end, boxes, centers);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

/// First intersection of the ray `origin + λ·direction`, `λ ≥ 0`.
pub fn ray_first_hit<T: Real>(origin: &Vector3<T>, direction: &Vector3<T>, mesh: &TriMesh<T>) -> Option<RayHit<T>> {
    TriangleBvh::build(mesh).first_hit(origin, direction)
}

/// Minimum Euclidean distance between segment `[a, b]` and the mesh surface.
pub fn segment_mesh_min_distance<T: Real>(a: &Vector3<T>, b: &Vector3<T>, mesh: &TriMesh<T>) -> Result<T> {
    if mesh.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    TriangleBvh::build(mesh)
        .segment_distance(a, b)
        .ok_or(Error::EmptyMesh)
}
