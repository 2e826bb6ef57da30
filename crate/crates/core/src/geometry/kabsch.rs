//! Least-squares rigid alignment of corresponded point sets.

use nalgebra::{Matrix3, Vector3};

use super::mesh::centroid;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Proper rigid motion `q ≈ R p + t` minimizing the summed squared misfit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidAlignment<T: Real> {
    /// Column-convention rotation, `det = +1`.
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
    pub rmse: T,
}

impl<T: Real> RigidAlignment<T> {
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }
}

/// Kabsch alignment of `source` onto `target` (matched by index).
///
/// Fails when counts differ, when fewer than three points are given, or when
/// the cross-covariance has rank below two (collinear or coincident points),
/// where the optimal rotation is not unique.
pub fn kabsch_align<T: Real>(source: &[Vector3<T>], target: &[Vector3<T>]) -> Result<RigidAlignment<T>> {
    if source.len() != target.len() {
        return Err(Error::CountMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need at least 3 points, got {}",
            source.len()
        )));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (p, q) in source.iter().zip(target) {
        h += (p - cs) * (q - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateAlignment("SVD did not converge".into())),
    };
    let mut sv: Vec<T> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let tiny = T::EPS.sqrt() * T::lit(1e-2);
    if !(sv[0] > T::zero()) || sv[1] <= sv[0] * tiny {
        return Err(Error::DegenerateAlignment(
            "points are collinear or coincident".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut correction = Matrix3::identity();
    if d < T::zero() {
        correction[(2, 2)] = -T::one();
    }
    let rotation = v * correction * u.transpose();
    let translation = ct - rotation * cs;
    let sse = source
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (p, q)| acc + (rotation * p + translation - q).norm_squared());
    let rmse = (sse / T::from_count(source.len())).sqrt();
    Ok(RigidAlignment {
        rotation,
        translation,
        rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform::axis_angle;

    fn cloud() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ]
    }

    #[test]
    fn identity_case() {
        let p = cloud();
        let a = kabsch_align(&p, &p).unwrap();
        assert!((a.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(a.translation.norm() < 1e-12);
        assert!(a.rmse < 1e-12);
    }

    #[test]
    fn quarter_turn_with_shift() {
        let p = cloud();
        let r = axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let t = Vector3::new(1.0, 2.0, 3.0);
        let q: Vec<_> = p.iter().map(|x| r * x + t).collect();
        let a = kabsch_align(&p, &q).unwrap();
        assert!((a.rotation - r).norm() < 1e-9);
        assert!((a.translation - t).norm() < 1e-9);
        assert!(a.rmse < 1e-9);
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reflection_is_corrected() {
        // a planar set mirrored through z: the best proper rotation exists
        let p = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let q: Vec<_> = p.iter().map(|x| Vector3::new(x.x, x.y, -x.z)).collect();
        let a = kabsch_align(&p, &q).unwrap();
        assert!((a.rotation.determinant() - 1.0f64).abs() < 1e-9);
        assert!(a.rmse > 0.1);
    }

    #[test]
    fn errors() {
        let p = cloud();
        assert!(matches!(
            kabsch_align(&p, &p[..4]),
            Err(Error::CountMismatch { .. })
        ));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            kabsch_align(&line, &line),
            Err(Error::DegenerateAlignment(_))
        ));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(kabsch_align(&same, &same).is_err());
    }

    #[test]
    fn single_precision() {
        let p: Vec<Vector3<f32>> = cloud().iter().map(|v| v.cast::<f32>()).collect();
        let r = axis_angle(&Vector3::new(0.0f32, 1.0, 0.0), 0.4);
        let q: Vec<_> = p.iter().map(|x| r * x).collect();
        let a = kabsch_align(&p, &q).unwrap();
        assert!((a.rotation - r).norm() < 1e-5);
    }
}
