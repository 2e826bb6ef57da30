//! Skin-contact candidates, entry rays and the control-facing state.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::AnatomicalFrame;
use crate::error::{Error, Result};
use crate::format::{check_format_version, format_version, read_json, write_json};
use crate::geometry::{ray_first_hit, TriMesh, TriangleBvh};
use crate::instantiation::InstantiatedOrgan;
use crate::prior::OrganPriorAsset;
use crate::scalar::Real;

/// Which point inside the organ to aim for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", bound = "")]
pub enum TargetSpec<T: Real> {
    Centroid,
    Landmark {
        name: String,
    },
    Point {
        #[serde(with = "crate::format::vec3_array")]
        point: Vector3<T>,
    },
}

/// Resolves a target specification to a world point on the organ.
pub fn resolve_target<T: Real>(organ: &InstantiatedOrgan<T>, spec: &TargetSpec<T>) -> Result<Vector3<T>> {
    match spec {
        TargetSpec::Centroid => Ok(organ.world.centroid()),
        TargetSpec::Point { point } => Ok(*point),
        TargetSpec::Landmark { name } => {
            let idx = organ
                .landmarks
                .get(name)
                .ok_or_else(|| Error::UnknownLandmark(name.clone()))?;
            let v = organ.world.vertices();
            let sum = idx.iter().fold(Vector3::zeros(), |a, &i| a + v[i]);
            Ok(sum / T::from_count(idx.len()))
        }
    }
}

/// First skin hit of the ray from `target` along the frame's anterior axis.
pub fn project_to_surface<T: Real>(
    target: &Vector3<T>,
    frame: &AnatomicalFrame<T>,
    skin: &TriMesh<T>,
) -> Result<Vector3<T>> {
    ray_first_hit(target, &frame.axis(2), skin)
        .map(|h| h.point)
        .ok_or(Error::ProjectionMiss)
}

/// A skin vertex considered as a probe contact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ContactCandidate<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub q: Vector3<T>,
    /// Outward unit skin normal at `q`.
    #[serde(with = "crate::format::vec3_array")]
    pub n: Vector3<T>,
    /// Unit ray from `q` toward the target.
    #[serde(with = "crate::format::vec3_array")]
    pub r: Vector3<T>,
    pub s_align: T,
    pub s_skel: T,
    pub s: T,
    /// Skin vertex index.
    pub source_index: usize,
}

/// Forward-facing skin vertices within `radius` of `center`, with their
/// area-weighted normals, in vertex order.
pub fn gather_candidates<T: Real>(
    skin: &TriMesh<T>,
    center: &Vector3<T>,
    radius: T,
    frame: &AnatomicalFrame<T>,
) -> Result<Vec<(usize, Vector3<T>, Vector3<T>)>> {
    if !(radius > T::zero()) {
        return Err(Error::InvalidConfig("candidate radius must be positive".into()));
    }
    let ez = frame.axis(2);
    let normals = skin.vertex_normals();
    let r2 = radius * radius;
    let out: Vec<_> = skin
        .vertices()
        .iter()
        .zip(&normals)
        .enumerate()
        .filter(|(_, (v, n))| (*v - center).norm_squared() <= r2 && n.dot(&ez) > T::zero())
        .map(|(i, (v, n))| (i, *v, *n))
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyCandidates {
            radius: radius.to_f64_lossy(),
        });
    }
    Ok(out)
}

/// Scores a contact `q` with outward normal `n`. `skeleton_distance` is
/// the segment-to-bone distance, or `None` when no skeleton is available.
pub fn score_candidate<T: Real>(
    q: &Vector3<T>,
    n: &Vector3<T>,
    target: &Vector3<T>,
    skeleton_distance: Option<T>,
    delta_skel: T,
) -> Result<(Vector3<T>, T, T, T)> {
    let d = target - q;
    let len = d.norm();
    if !(len > T::zero()) {
        return Err(Error::ZeroLengthRay);
    }
    let r = d / len;
    let s_align = -n.dot(&r);
    let s_skel = match skeleton_distance {
        Some(dist) => (dist / delta_skel).min(T::one()).max(T::zero()),
        None => T::one(),
    };
    Ok((r, s_align, s_skel, s_align * s_skel))
}

/// Stable descending sort by score (ties by ascending index), then truncation.
pub fn select_top<T: Real>(mut candidates: Vec<ContactCandidate<T>>, k: usize) -> Vec<ContactCandidate<T>> {
    candidates.sort_by(|a, b| {
        b.s.partial_cmp(&a.s)
            .unwrap_or(Ordering::Equal)
            .then(a.source_index.cmp(&b.source_index))
    });
    candidates.truncate(k);
    candidates
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetingConfig {
    /// Candidate neighborhood radius in cm.
    pub radius: f64,
    /// Clearance at which the skeletal score saturates, in cm.
    pub delta_skel: f64,
    pub k_cand: usize,
}

impl Default for TargetingConfig {
    fn default() -> Self {
        Self {
            radius: 8.0,
            delta_skel: 1.0,
            k_cand: 3,
        }
    }
}

impl TargetingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.delta_skel > 0.0) || self.k_cand == 0 {
            return Err(Error::InvalidConfig(
                "radius and delta_skel must be positive and k_cand at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Projects the target, scores every forward-facing candidate and keeps the best.
pub fn plan_contacts<T: Real>(
    target: &Vector3<T>,
    frame: &AnatomicalFrame<T>,
    skin: &TriMesh<T>,
    skeleton: Option<&TriangleBvh<T>>,
    config: &TargetingConfig,
) -> Result<Vec<ContactCandidate<T>>> {
    config.validate()?;
    let seed = project_to_surface(target, frame, skin)?;
    let pool = gather_candidates(skin, &seed, T::lit(config.radius), frame)?;
    let delta = T::lit(config.delta_skel);
    let scored = pool
        .par_iter()
        .map(|(i, q, n)| {
            let dist = match skeleton {
                Some(bvh) if !bvh.is_empty() => bvh.segment_distance(q, target),
                _ => None,
            };
            let (r, s_align, s_skel, s) = score_candidate(q, n, target, dist, delta)?;
            Ok(ContactCandidate {
                q: *q,
                n: *n,
                r,
                s_align,
                s_skel,
                s,
                source_index: *i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select_top(scored, config.k_cand))
}

/// Probe pose at a contact: position `q`, rotation columns `(x, y, z)` in
/// world coordinates with `z = −r` and `y` the component of the frame's up
/// axis orthogonal to `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ProbePose<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub position: Vector3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub rotation: Matrix3<T>,
}

pub fn probe_pose<T: Real>(c: &ContactCandidate<T>, frame: &AnatomicalFrame<T>) -> ProbePose<T> {
    let z = -c.r;
    let pick = |axis: Vector3<T>| {
        let p = axis - z * z.dot(&axis);
        (p.norm() > T::lit(1e-9)).then(|| p.normalize())
    };
    let y = pick(frame.axis(1))
        .or_else(|| pick(frame.axis(0)))
        .unwrap_or_else(|| pick(Vector3::x()).unwrap_or_else(Vector3::y));
    let x = y.cross(&z);
    ProbePose {
        position: c.q,
        rotation: Matrix3::from_columns(&[x, y, z]),
    }
}

/// Structured state handed to a robot controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ControlState<T: Real> {
    pub format_version: String,
    pub organ: String,
    /// Path of the OBJ holding the predicted world mesh.
    pub mesh_ref: String,
    pub candidates: Vec<ContactCandidate<T>>,
    #[serde(rename = "R_bar", with = "crate::format::mat3_rows")]
    pub r_bar: Matrix3<T>,
    #[serde(rename = "Sigma_dc", with = "crate::format::mat3_rows")]
    pub sigma_dc: Matrix3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_pos: Vector3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_scale: Vector3<T>,
    pub pose6dof: Vec<ProbePose<T>>,
}

pub fn build_control_state<T: Real>(
    organ: &InstantiatedOrgan<T>,
    top: Vec<ContactCandidate<T>>,
    asset: &OrganPriorAsset<T>,
    mesh_ref: &str,
) -> Result<ControlState<T>> {
    if organ.organ != asset.organ {
        return Err(Error::OrganMismatch(organ.organ.clone(), asset.organ.clone()));
    }
    let pose6dof = top.iter().map(|c| probe_pose(c, &organ.frame)).collect();
    Ok(ControlState {
        format_version: format_version(),
        organ: organ.organ.clone(),
        mesh_ref: mesh_ref.to_string(),
        candidates: top,
        r_bar: asset.r_bar,
        sigma_dc: asset.sigma_dc,
        sigma2_pos: asset.sigma2_pos,
        sigma2_scale: asset.sigma2_scale,
        pose6dof,
    })
}

impl<T: Real> ControlState<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = read_json(path)?;
        check_format_version(&s.format_version)?;
        Ok(s)
    }
}
