//! Static 3-d tree for exact nearest-neighbor queries over point samples.

use nalgebra::Vector3;

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct KdTree<T: Real> {
    points: Vec<Vector3<T>>,
    /// Implicit balanced tree: `order[mid]` splits `order[lo..hi]`.
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vector3<T>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0, points.len());
        Self {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// smaller index.
    pub fn nearest(&self, q: &Vector3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::max_value().expect("bounded float"));
        self.search(q, 0, self.points.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vector3<T>, lo: usize, hi: usize, best: &mut (usize, T)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if best.0 == usize::MAX || d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build<T: Real>(points: &[Vector3<T>], order: &mut [usize], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mut min = points[order[lo]];
    let mut max = min;
    for &i in &order[lo..hi] {
        min = min.inf(&points[i]);
        max = max.sup(&points[i]);
    }
    let ext = max - min;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = lo + (hi - lo) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    axes[mid] = axis as u8;
    build(points, order, axes, lo, mid);
    build(points, order, axes, mid + 1, hi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..200 {
            let q = Vector3::new(rng.random::<f64>(), rng.random(), rng.random()) * 1.2;
            let (i, d2) = tree.nearest(&q).unwrap();
            let best = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d2, best);
            assert_eq!((pts[i] - q).norm_squared(), best);
        }
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::<f64>::build(&[]).nearest(&Vector3::zeros()).is_none());
    }
}
