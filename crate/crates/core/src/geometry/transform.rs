//! Affine transforms acting from the right on row vectors.
//!
//! A point `v` (row) maps to `v · L + t`. In column form this is
//! `Lᵀ v + t`. The homogeneous 4×4 matrix is `[[L, 0], [t, 1]]`, so
//! composing `A * B` means "apply `A`, then `B`".

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AffineTransform<T: Real> {
    /// Right-acting linear block `L = (s R)ᵀ`.
    #[serde(with = "crate::format::mat3_rows")]
    pub linear: Matrix3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub translation: Vector3<T>,
}

impl<T: Real> Default for AffineTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> AffineTransform<T> {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: t,
        }
    }

    /// Builds `G = [[(s R)ᵀ, 0], [tᵀ, 1]]` from a column-convention rotation.
    pub fn from_parts(rotation: &Matrix3<T>, translation: Vector3<T>, scale: T) -> Self {
        Self {
            linear: (rotation * scale).transpose(),
            translation,
        }
    }

    pub fn apply(&self, v: &Vector3<T>) -> Vector3<T> {
        self.linear.tr_mul(v) + self.translation
    }

    /// Applies only the linear block (for directions).
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.linear.tr_mul(v)
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            linear: self.linear * next.linear,
            translation: next.linear.tr_mul(&self.translation) + next.translation,
        }
    }

    pub fn try_inverse(&self) -> Option<Self> {
        let inv = self.linear.try_inverse()?;
        if !inv.iter().all(|x| x.is_finite()) {
            return None;
        }
        Some(Self {
            linear: inv,
            translation: -inv.tr_mul(&self.translation),
        })
    }

    /// Splits the linear block into `s R` with `s > 0`, `R` a column-convention
    /// rotation.
    pub fn scale_rotation(&self) -> Result<(T, Matrix3<T>)> {
        let det = self.linear.determinant();
        if !(det > T::zero()) {
            return Err(Error::InvalidTransform(format!(
                "linear block has non-positive determinant {}",
                det.to_f64_lossy()
            )));
        }
        let s = det.powf(T::one() / T::lit(3.0));
        Ok((s, (self.linear / s).transpose()))
    }

    /// Checks that the linear block is a positive multiple of a rotation.
    pub fn validate(&self) -> Result<()> {
        if !self.linear.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let (_, r) = self.scale_rotation()?;
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if err > T::lit(1e-6) {
            return Err(Error::InvalidTransform(format!(
                "linear block is not a scaled rotation (|RᵀR - I| = {:e})",
                err.to_f64_lossy()
            )));
        }
        Ok(())
    }

    /// Homogeneous right-acting matrix `[[L, 0], [t, 1]]`.
    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear);
        for c in 0..3 {
            m[(3, c)] = self.translation[c];
        }
        m
    }

    pub fn from_homogeneous(m: &Matrix4<T>) -> Result<Self> {
        let tol = T::lit(1e-9);
        let col_ok = (0..3).all(|r| m[(r, 3)].abs() <= tol) && (m[(3, 3)] - T::one()).abs() <= tol;
        if !col_ok {
            return Err(Error::InvalidTransform(
                "last column of a right-acting homogeneous matrix must be (0, 0, 0, 1)".into(),
            ));
        }
        Ok(Self {
            linear: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: Vector3::new(m[(3, 0)], m[(3, 1)], m[(3, 2)]),
        })
    }

    pub fn to_rows(&self) -> [[T; 4]; 4] {
        let m = self.to_homogeneous();
        let mut rows = [[T::zero(); 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[T; 4]; 4]) -> Result<Self> {
        Self::from_homogeneous(&Matrix4::from_fn(|r, c| rows[r][c]))
    }
}

impl<T: Real> Mul for AffineTransform<T> {
    type Output = Self;

    /// Matrix product of right-acting transforms: `self` applied first.
    fn mul(self, rhs: Self) -> Self {
        self.then(&rhs)
    }
}

/// Rotation of `angle` radians about a unit `axis` (column convention).
pub fn axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    let axis = nalgebra::Unit::new_normalize(*axis);
    nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Geodesic distance on SO(3) between two rotations, in radians.
pub fn rotation_angle_between<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let rel = a.transpose() * b;
    let cos = (rel.trace() - T::one()) * T::lit(0.5);
    let axial = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    (axial.norm() * T::lit(0.5)).atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_action_composition_order() {
        let a = AffineTransform::from_parts(
            &axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
            1.0,
        );
        let b = AffineTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let p = Vector3::new(1.0, 0.0, 0.0);
        // rotate then translate
        let q = (a * b).apply(&p);
        assert!((q - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        let q = (b * a).apply(&p);
        assert!((q - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let g = AffineTransform::from_parts(
            &axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7),
            Vector3::new(1.0, -2.0, 0.5),
            1.3,
        );
        let inv = g.try_inverse().unwrap();
        let id = g * inv;
        assert!((id.linear - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        let (s, r) = g.scale_rotation().unwrap();
        assert!((s - 1.3f64).abs() < 1e-12);
        assert!((r - axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7)).norm() < 1e-12);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn homogeneous_rows_round_trip() {
        let g = AffineTransform::from_parts(&axis_angle(&Vector3::x(), 0.3), Vector3::new(1.0, 2.0, 3.0), 2.0);
        let rows = g.to_rows();
        assert_eq!(rows[3], [1.0, 2.0, 3.0, 1.0]);
        assert_eq!(AffineTransform::from_rows(&rows).unwrap(), g);
        let mut bad = rows;
        bad[0][3] = 1.0;
        assert!(AffineTransform::from_rows(&bad).is_err());
    }

    #[test]
    fn shear_is_rejected() {
        let mut g = AffineTransform::<f64>::identity();
        g.linear[(0, 1)] = 0.5;
        assert!(g.validate().is_err());
    }
}
