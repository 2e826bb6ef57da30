//! Anatomical frames and the low-dimensional organ decomposition
//! (centroid displacement, rotation, log-scale).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_json, write_json};
use crate::geometry::{centroid, kabsch_align, read_obj, write_obj, TriMesh};
use crate::rig::RigState;
use crate::scalar::Real;

/// Rig joint names used to build the anatomical frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameCues {
    pub root: String,
    pub left_hip: String,
    pub right_hip: String,
    pub upper_spine: String,
}

impl Default for FrameCues {
    fn default() -> Self {
        Self {
            root: "root".into(),
            left_hip: "left_hip".into(),
            right_hip: "right_hip".into(),
            upper_spine: "spine_upper".into(),
        }
    }
}

/// Body-centric coordinate system. Rows of `rotation` are the x (left to
/// right), y (up) and z (anterior) axes in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AnatomicalFrame<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub origin: Vector3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub rotation: Matrix3<T>,
}

impl<T: Real> Default for AnatomicalFrame<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> AnatomicalFrame<T> {
    pub fn identity() -> Self {
        Self {
            origin: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(origin: Vector3<T>, rotation: Matrix3<T>) -> Result<Self> {
        let f = Self { origin, rotation };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        let det = self.rotation.determinant();
        if !(ortho <= T::lit(1e-6)) || !(det > T::zero()) {
            return Err(Error::DegenerateFrame(format!(
                "orientation is not a proper rotation (|RᵀR - I| = {:e}, det = {})",
                ortho.to_f64_lossy(),
                det.to_f64_lossy()
            )));
        }
        Ok(())
    }

    /// Builds the frame from the rest-rig positions of the cue joints.
    pub fn from_rig(rig: &RigState<T>, cues: &FrameCues) -> Result<Self> {
        let p = |name: &str| rig.joint(name).map(|j| j.rest_position());
        Self::from_points(&p(&cues.root)?, &p(&cues.left_hip)?, &p(&cues.right_hip)?, &p(&cues.upper_spine)?)
    }

    pub fn from_points(
        root: &Vector3<T>,
        left_hip: &Vector3<T>,
        right_hip: &Vector3<T>,
        upper_spine: &Vector3<T>,
    ) -> Result<Self> {
        let tiny = T::lit(1e-9);
        let across = right_hip - left_hip;
        if across.norm() <= tiny {
            return Err(Error::DegenerateFrame("hip joints coincide".into()));
        }
        let x = across.normalize();
        let up = upper_spine - root;
        let y_raw = up - x * x.dot(&up);
        if y_raw.norm() <= tiny * up.norm().max(T::one()) {
            return Err(Error::DegenerateFrame("spine direction is collinear with the hip axis".into()));
        }
        let y = y_raw.normalize();
        let z = x.cross(&y);
        Ok(Self {
            origin: *root,
            rotation: Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]),
        })
    }

    /// Unit axis `i` (0 = x, 1 = y, 2 = z) in world coordinates.
    pub fn axis(&self, i: usize) -> Vector3<T> {
        self.rotation.row(i).transpose()
    }

    pub fn point_to_local(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * (p - self.origin)
    }

    pub fn point_to_world(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.tr_mul(p) + self.origin
    }

    pub fn vector_to_world(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation.tr_mul(v)
    }

    /// `(V − o) Rᵀ` in row form.
    pub fn to_local(&self, mesh: &TriMesh<T>) -> TriMesh<T> {
        mesh.map_vertices(|v| self.point_to_local(v))
    }

    /// `V R + o` in row form.
    pub fn to_world(&self, mesh: &TriMesh<T>) -> TriMesh<T> {
        mesh.map_vertices(|v| self.point_to_world(v))
    }
}

/// Organ template fixed in the anatomical frame of a reference case.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTemplate<T: Real> {
    pub organ: String,
    pub mesh: TriMesh<T>,
    pub centroid: Vector3<T>,
    pub frame_id: String,
    /// Named vertex-index sets carried through every transform of the mesh.
    pub landmarks: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TemplateSidecar {
    organ: String,
    centroid: [f64; 3],
    frame_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    landmarks: BTreeMap<String, Vec<usize>>,
}

impl<T: Real> ReferenceTemplate<T> {
    pub fn new(organ: impl Into<String>, mesh: TriMesh<T>, frame_id: impl Into<String>) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Self {
            organ: organ.into(),
            centroid: mesh.centroid(),
            mesh,
            frame_id: frame_id.into(),
            landmarks: BTreeMap::new(),
        })
    }

    pub fn with_landmarks(mut self, landmarks: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let n = self.mesh.vertex_count();
        for (name, idx) in &landmarks {
            if idx.is_empty() || idx.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("landmark `{name}` has invalid vertex indices")));
            }
        }
        self.landmarks = landmarks;
        Ok(self)
    }

    fn sidecar_path(obj: &Path) -> PathBuf {
        obj.with_extension("json")
    }

    /// Writes `<path>.obj` and a JSON sidecar next to it.
    pub fn save(&self, obj_path: &Path) -> Result<()> {
        write_obj(obj_path, &self.mesh)?;
        let c = self.centroid;
        write_json(
            &Self::sidecar_path(obj_path),
            &TemplateSidecar {
                organ: self.organ.clone(),
                centroid: [c.x.to_f64_lossy(), c.y.to_f64_lossy(), c.z.to_f64_lossy()],
                frame_id: self.frame_id.clone(),
                landmarks: self.landmarks.clone(),
            },
        )
    }

    pub fn load(obj_path: &Path) -> Result<Self> {
        let mesh: TriMesh<T> = read_obj(obj_path)?;
        let side: TemplateSidecar = read_json(&Self::sidecar_path(obj_path))?;
        let t = Self::new(side.organ, mesh, side.frame_id)?.with_landmarks(side.landmarks)?;
        let stored = Vector3::new(side.centroid[0], side.centroid[1], side.centroid[2]);
        let actual = t.centroid.map(|x| x.to_f64_lossy());
        // OBJ text keeps ~17 significant digits, so allow a small relative slack
        let tol = 1e-9 * stored.norm().max(1.0);
        if (stored - actual).norm() > tol {
            return Err(Error::Parse(format!(
                "template sidecar centroid differs from mesh centroid by {:e}",
                (stored - actual).norm()
            )));
        }
        Ok(t)
    }
}

/// Template-relative description of one registered organ instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OrganDescriptor<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub delta_c: Vector3<T>,
    /// Column-convention rotation taking the template onto the instance.
    #[serde(with = "crate::format::mat3_rows")]
    pub rotation: Matrix3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub ell: Vector3<T>,
    pub rmse: T,
    pub volume_ratio: T,
}

/// Population standard deviation per axis of centered points.
pub fn axis_std<T: Real>(points: &[Vector3<T>]) -> Vector3<T> {
    let c = centroid(points);
    let n = T::from_count(points.len().max(1));
    let var = points
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<T>, p| acc + (p - c).component_mul(&(p - c)))
        / n;
    var.map(|v| v.sqrt())
}

fn check_spread<T: Real>(std: &Vector3<T>) -> Result<()> {
    for axis in 0..3 {
        if !(std[axis] >= T::lit(1e-9)) {
            return Err(Error::DegenerateSpread {
                axis,
                std: std[axis].to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Decomposes an instance (already in the local frame, in vertex
/// correspondence with the template) into `(Δc, R, ℓ)`.
pub fn decompose_instance<T: Real>(
    instance: &TriMesh<T>,
    template: &ReferenceTemplate<T>,
    epsilon: T,
) -> Result<OrganDescriptor<T>> {
    check_counts(instance, template)?;
    let align = kabsch_align(template.mesh.vertices(), instance.vertices())?;
    decompose_with_rotation(instance, template, &align.rotation, &align.translation, align.rmse, epsilon)
}

/// Same as [`decompose_instance`] with a given rigid alignment.
pub fn decompose_with_rotation<T: Real>(
    instance: &TriMesh<T>,
    template: &ReferenceTemplate<T>,
    rotation: &Matrix3<T>,
    translation: &Vector3<T>,
    rmse: T,
    epsilon: T,
) -> Result<OrganDescriptor<T>> {
    check_counts(instance, template)?;
    let template_std = axis_std(template.mesh.vertices());
    check_spread(&template_std)?;
    let delta_c = instance.centroid() - template.centroid;
    let aligned: Vec<Vector3<T>> = instance
        .vertices()
        .iter()
        .map(|v| rotation.tr_mul(&(v - translation)))
        .collect();
    let aligned_std = axis_std(&aligned);
    let s = aligned_std.component_div(&template_std.add_scalar(epsilon));
    if s.iter().any(|&x| !(x > T::zero())) {
        return Err(Error::NonPositiveScale(s.min().to_f64_lossy()));
    }
    Ok(OrganDescriptor {
        delta_c,
        rotation: *rotation,
        ell: s.map(|x| x.ln()),
        rmse,
        volume_ratio: s.x * s.y * s.z,
    })
}

fn check_counts<T: Real>(instance: &TriMesh<T>, template: &ReferenceTemplate<T>) -> Result<()> {
    if instance.vertex_count() != template.mesh.vertex_count() {
        return Err(Error::CountMismatch {
            source_len: template.mesh.vertex_count(),
            target_len: instance.vertex_count(),
        });
    }
    Ok(())
}

/// Quantile with linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Inclusive Tukey fences `[Q1 − m·IQR, Q3 + m·IQR]`.
pub fn iqr_bounds(values: &[f64], multiplier: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    (q1 - multiplier * iqr, q3 + multiplier * iqr)
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    let slack = |b: f64| 1e-12 * b.abs().max(1.0);
    x >= lo - slack(lo) && x <= hi + slack(hi)
}

/// Keep mask over descriptors whose rmse and volume ratio both fall inside
/// the fences. Fewer than four samples are all kept.
pub fn iqr_filter<T: Real>(descriptors: &[OrganDescriptor<T>], multiplier: f64) -> Vec<bool> {
    if descriptors.len() < 4 {
        log::warn!(
            "outlier filtering needs at least 4 samples, got {}; keeping all",
            descriptors.len()
        );
        return vec![true; descriptors.len()];
    }
    let rmse: Vec<f64> = descriptors.iter().map(|d| d.rmse.to_f64_lossy()).collect();
    let vol: Vec<f64> = descriptors.iter().map(|d| d.volume_ratio.to_f64_lossy()).collect();
    let br = iqr_bounds(&rmse, multiplier);
    let bv = iqr_bounds(&vol, multiplier);
    rmse.iter()
        .zip(&vol)
        .map(|(&r, &v)| within(r, br) && within(v, bv))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, shapes};

    fn desc(rmse: f64, vol: f64) -> OrganDescriptor<f64> {
        OrganDescriptor {
            delta_c: Vector3::zeros(),
            rotation: Matrix3::identity(),
            ell: Vector3::zeros(),
            rmse,
            volume_ratio: vol,
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.75), 4.0);
        assert_eq!(quantile(&[0.9, 1.0, 1.0, 1.1], 0.25), 0.975);
    }

    #[test]
    fn iqr_examples() {
        let d: Vec<_> = [1.0, 1.0, 1.0, 1.0, 100.0].iter().map(|&r| desc(r, 1.0)).collect();
        assert_eq!(iqr_filter(&d, 1.5), vec![true, true, true, true, false]);
        let d: Vec<_> = [0.9, 1.0, 1.0, 1.1].iter().map(|&v| desc(0.1, v)).collect();
        assert!(iqr_filter(&d, 1.5).iter().all(|&k| k));
        let d: Vec<_> = (0..3).map(|i| desc(i as f64 * 100.0, 1.0)).collect();
        assert!(iqr_filter(&d, 1.5).iter().all(|&k| k));
    }

    #[test]
    fn population_std_two_points() {
        let s = axis_std(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 4.0, -6.0)]);
        assert_eq!(s, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn axis_aligned_frame() {
        let f = AnatomicalFrame::from_points(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(-1.0, 0.0, 0.0),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::new(0.0, 5.0, 0.0),
        )
        .unwrap();
        assert!((f.rotation - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn collinear_cues_rejected() {
        let r = AnatomicalFrame::from_points(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(-1.0, 0.0, 0.0),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::new(3.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::DegenerateFrame(_))));
    }

    #[test]
    fn scaled_instance_recovers_log_scale() {
        let m = shapes::ellipsoid::<f64>(Vector3::new(1.0, 2.0, 3.0), Vector3::new(3.0, 2.0, 1.5), 2);
        let t = ReferenceTemplate::new("liver", m.clone(), "ref").unwrap();
        let c = t.centroid;
        let scaled = m.map_vertices(|v| (v - c) * 2.0 + c);
        let d = decompose_instance(&scaled, &t, 1e-8).unwrap();
        for k in 0..3 {
            assert!((d.ell[k] - 2f64.ln()).abs() < 1e-6);
        }
        assert!(d.delta_c.norm() < 1e-12);
    }

    #[test]
    fn rotated_instance_recovers_rotation() {
        let m = shapes::ellipsoid::<f64>(Vector3::zeros(), Vector3::new(3.0, 2.0, 1.5), 2);
        let t = ReferenceTemplate::new("kidney", m.clone(), "ref").unwrap();
        let r = axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.3);
        let inst = m.map_vertices(|v| r * v + Vector3::new(3.0, 0.0, 0.0));
        let d = decompose_instance(&inst, &t, 1e-8).unwrap();
        assert!((d.rotation - r).norm() < 1e-9);
        assert!(d.ell.norm() < 1e-7);
        assert!((d.delta_c - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn flat_template_is_degenerate() {
        let m = shapes::plane_grid::<f64>(3, 1.0, 0.0);
        let t = ReferenceTemplate::new("x", m.clone(), "ref").unwrap();
        assert!(matches!(
            decompose_instance(&m, &t, 1e-8),
            Err(Error::DegenerateSpread { axis: 2, .. })
        ));
    }
}
