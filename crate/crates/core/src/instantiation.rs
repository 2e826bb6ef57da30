//! Subject-specific organ hypotheses from a fitted prior.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::decomposition::{AnatomicalFrame, ReferenceTemplate};
use crate::error::{Error, Result};
use crate::format::write_json;
use crate::geometry::{write_obj, TriMesh};
use crate::prior::OrganPriorAsset;
use crate::scalar::Real;

/// `R̄ (ŝ ⊙ (v − c̄)) + c̄ + Δĉ` per vertex (column form).
pub fn instantiate_local<T: Real>(
    template: &ReferenceTemplate<T>,
    delta_c: &Vector3<T>,
    ell: &Vector3<T>,
    r_bar: &Matrix3<T>,
) -> Result<TriMesh<T>> {
    let s = ell.map(|l| l.exp());
    if let Some(bad) = s.iter().find(|&&x| !(x > T::zero()) || !x.is_finite()) {
        return Err(Error::NonPositiveScale(bad.to_f64_lossy()));
    }
    let c = template.centroid;
    let shift = c + delta_c;
    Ok(template
        .mesh
        .map_vertices(|v| r_bar * (v - c).component_mul(&s) + shift))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Uncertainty<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_pos: Vector3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_scale: Vector3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub sigma_dc: Matrix3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstantiatedOrgan<T: Real> {
    pub organ: String,
    pub local: TriMesh<T>,
    pub world: TriMesh<T>,
    pub delta_c: Vector3<T>,
    pub ell: Vector3<T>,
    pub scale: Vector3<T>,
    pub r_bar: Matrix3<T>,
    pub frame: AnatomicalFrame<T>,
    pub frame_id: String,
    pub uncertainty: Uncertainty<T>,
    pub landmarks: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize)]
#[serde(bound = "")]
struct OrganSidecar<'a, T: Real> {
    organ: &'a str,
    #[serde(with = "crate::format::vec3_array")]
    delta_c: Vector3<T>,
    #[serde(with = "crate::format::vec3_array")]
    ell: Vector3<T>,
    frame_id: &'a str,
    uncertainty: &'a Uncertainty<T>,
}

impl<T: Real> InstantiatedOrgan<T> {
    /// Writes the world mesh as OBJ with a JSON sidecar of the same stem.
    pub fn save(&self, obj_path: &Path) -> Result<()> {
        write_obj(obj_path, &self.world)?;
        write_json(
            &obj_path.with_extension("json"),
            &OrganSidecar {
                organ: &self.organ,
                delta_c: self.delta_c,
                ell: self.ell,
                frame_id: &self.frame_id,
                uncertainty: &self.uncertainty,
            },
        )
    }
}

/// Predicts, places and maps one organ into the subject's world frame.
pub fn instantiate_organ<T: Real>(
    asset: &OrganPriorAsset<T>,
    template: &ReferenceTemplate<T>,
    features: &DVector<T>,
    frame: &AnatomicalFrame<T>,
) -> Result<InstantiatedOrgan<T>> {
    if asset.organ != template.organ {
        return Err(Error::OrganMismatch(asset.organ.clone(), template.organ.clone()));
    }
    let p = asset.predict(features)?;
    let local = instantiate_local(template, &p.delta_c, &p.ell, &asset.r_bar)?;
    let world = frame.to_world(&local);
    Ok(InstantiatedOrgan {
        organ: asset.organ.clone(),
        local,
        world,
        delta_c: p.delta_c,
        ell: p.ell,
        scale: p.scale,
        r_bar: asset.r_bar,
        frame: *frame,
        frame_id: asset.frame_id.clone(),
        uncertainty: Uncertainty {
            sigma2_pos: asset.sigma2_pos,
            sigma2_scale: asset.sigma2_scale,
            sigma_dc: asset.sigma_dc,
        },
        landmarks: template.landmarks.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, shapes};

    fn cube() -> ReferenceTemplate<f64> {
        ReferenceTemplate::new("cube", shapes::unit_cube(), "ref").unwrap()
    }

    #[test]
    fn neutral_parameters_return_template() {
        let t = cube();
        let m = instantiate_local(&t, &Vector3::zeros(), &Vector3::zeros(), &Matrix3::identity()).unwrap();
        assert_eq!(m, t.mesh);
    }

    #[test]
    fn log_scale_doubles_x_extent() {
        let t = cube();
        let dc = Vector3::new(0.5, 0.0, -1.0);
        let m = instantiate_local(&t, &dc, &Vector3::new(2f64.ln(), 0.0, 0.0), &Matrix3::identity()).unwrap();
        let e = m.aabb().extent();
        let e0 = t.mesh.aabb().extent();
        assert!((e.x - 2.0 * e0.x).abs() < 1e-12);
        assert!((e.y - e0.y).abs() < 1e-12 && (e.z - e0.z).abs() < 1e-12);
        assert!((m.centroid() - t.centroid - dc).norm() < 1e-12);
    }

    #[test]
    fn quarter_turn_matches_hand_rotation() {
        let t = cube();
        let r = axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let m = instantiate_local(&t, &Vector3::zeros(), &Vector3::zeros(), &r).unwrap();
        let c = t.centroid;
        for (v, w) in t.mesh.vertices().iter().zip(m.vertices()) {
            let d = v - c;
            let hand = Vector3::new(-d.y, d.x, d.z) + c;
            assert!((hand - w).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_infinite_scale() {
        let t = cube();
        let r = instantiate_local(&t, &Vector3::zeros(), &Vector3::new(1e6, 0.0, 0.0), &Matrix3::identity());
        assert!(matches!(r, Err(Error::NonPositiveScale(_))));
    }
}
