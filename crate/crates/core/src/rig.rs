//! Rig states, forward kinematics and organ-aware inverse skinning.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{check_format_version, format_version, read_json, write_json};
use crate::geometry::{centroid, AffineTransform, TriMesh};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint<T: Real> {
    pub name: String,
    pub parent: Option<usize>,
    /// Global rest-rig transform.
    pub rest: AffineTransform<T>,
    /// Global posed transform.
    pub pose: AffineTransform<T>,
    pub scale: T,
}

impl<T: Real> Joint<T> {
    pub fn rest_position(&self) -> Vector3<T> {
        self.rest.translation
    }

    pub fn pose_position(&self) -> Vector3<T> {
        self.pose.translation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigState<T: Real> {
    joints: Vec<Joint<T>>,
    beta: Option<Vec<T>>,
}

impl<T: Real> RigState<T> {
    pub fn new(joints: Vec<Joint<T>>, beta: Option<Vec<T>>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, j) in joints.iter().enumerate() {
            if !names.insert(j.name.as_str()) {
                return Err(Error::InvalidRig(format!("duplicate joint name `{}`", j.name)));
            }
            if let Some(p) = j.parent {
                if p >= joints.len() {
                    return Err(Error::InvalidRig(format!(
                        "joint `{}` has parent index {p} out of range",
                        j.name
                    )));
                }
            }
            if !(j.scale > T::zero()) || !j.scale.is_finite() {
                return Err(Error::InvalidRig(format!("joint {i} has non-positive scale")));
            }
            j.rest
                .validate()
                .and_then(|_| j.pose.validate())
                .map_err(|e| Error::InvalidRig(format!("joint `{}`: {e}", j.name)))?;
        }
        let parents: Vec<_> = joints.iter().map(|j| j.parent).collect();
        topological_order(&parents)?;
        if let Some(b) = &beta {
            if !b.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidRig("non-finite shape coefficient".into()));
            }
        }
        Ok(Self { joints, beta })
    }

    pub fn joints(&self) -> &[Joint<T>] {
        &self.joints
    }

    pub fn beta(&self) -> Option<&[T]> {
        self.beta.as_deref()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn joint(&self, name: &str) -> Result<&Joint<T>> {
        self.joint_index(name)
            .map(|i| &self.joints[i])
            .ok_or_else(|| Error::MissingJoint(name.to_string()))
    }

    /// The same rig with every posed transform followed by `motion`.
    pub fn with_global_motion(&self, motion: &AffineTransform<T>) -> Self {
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                pose: j.pose * *motion,
                ..j.clone()
            })
            .collect();
        Self {
            joints,
            beta: self.beta.clone(),
        }
    }

    /// A rig whose posed transforms equal its rest transforms.
    pub fn at_rest(&self) -> Self {
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                pose: j.rest,
                ..j.clone()
            })
            .collect();
        Self {
            joints,
            beta: self.beta.clone(),
        }
    }
}

/// Parent-first ordering of a joint forest.
fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    // 0 unvisited, 1 on stack, 2 done
    let mut state = vec![0u8; parents.len()];
    let mut order = Vec::with_capacity(parents.len());
    for start in 0..parents.len() {
        let mut chain = Vec::new();
        let mut cur = Some(start);
        while let Some(c) = cur {
            match state[c] {
                2 => break,
                1 => return Err(Error::Cycle(c)),
                _ => {
                    state[c] = 1;
                    chain.push(c);
                    cur = parents[c];
                    if let Some(p) = cur {
                        if p >= parents.len() {
                            return Err(Error::InvalidRig(format!("parent index {p} out of range")));
                        }
                    }
                }
            }
        }
        for &c in chain.iter().rev() {
            state[c] = 2;
            order.push(c);
        }
    }
    Ok(order)
}

/// Composes local joint transforms into globals: `G_j = L_j · G_parent`.
pub fn forward_kinematics<T: Real>(
    locals: &[AffineTransform<T>],
    parents: &[Option<usize>],
) -> Result<Vec<AffineTransform<T>>> {
    if locals.len() != parents.len() {
        return Err(Error::DimensionMismatch {
            expected: locals.len(),
            got: parents.len(),
        });
    }
    let order = topological_order(parents)?;
    let mut globals = vec![AffineTransform::identity(); locals.len()];
    for j in order {
        globals[j] = match parents[j] {
            Some(p) => locals[j] * globals[p],
            None => locals[j],
        };
    }
    Ok(globals)
}

/// Per-joint `ΔG_j = (G_j^pose)⁻¹ · G_j^rest`.
pub fn unposing_transforms<T: Real>(rig: &RigState<T>) -> Result<Vec<AffineTransform<T>>> {
    rig.joints
        .iter()
        .map(|j| {
            j.pose
                .try_inverse()
                .map(|inv| inv * j.rest)
                .ok_or_else(|| Error::SingularTransform(j.name.clone()))
        })
        .collect()
}

/// Normalized inverse-squared-distance weights `(d² + ε)⁻¹`.
///
/// With `epsilon == 0` a vertex that coincides with one or more joints is
/// shared equally between them.
pub fn skinning_weights<T: Real>(vertex: &Vector3<T>, joints: &[Vector3<T>], epsilon: T) -> Vec<T> {
    let raw: Vec<T> = joints.iter().map(|j| (vertex - j).norm_squared() + epsilon).collect();
    if raw.iter().any(|&r| r <= T::zero()) {
        let hits = raw.iter().filter(|&&r| r <= T::zero()).count();
        let w = T::one() / T::from_count(hits);
        return raw
            .iter()
            .map(|&r| if r <= T::zero() { w } else { T::zero() })
            .collect();
    }
    let inv: Vec<T> = raw.iter().map(|&r| T::one() / r).collect();
    let sum = inv.iter().fold(T::zero(), |a, &b| a + b);
    inv.into_iter().map(|w| w / sum).collect()
}

/// Set of joints allowed to drive internal organs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointWhitelist {
    /// Exact joint names.
    #[serde(default)]
    pub names: Vec<String>,
    /// Case-insensitive substrings; a joint whose name contains one is allowed.
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl JointWhitelist {
    /// Spine, root, hip/pelvis and neck joints.
    pub fn trunk() -> Self {
        Self {
            names: Vec::new(),
            keywords: ["spine", "root", "hip", "pelvis", "neck"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Result<Self> {
        let w = Self {
            names: names.into_iter().map(Into::into).collect(),
            keywords: Vec::new(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() && self.keywords.is_empty() {
            return Err(Error::InvalidConfig("joint whitelist is empty".into()));
        }
        Ok(())
    }

    pub fn allows(&self, joint: &str) -> bool {
        if self.names.iter().any(|n| n == joint) {
            return true;
        }
        let lower = joint.to_lowercase();
        self.keywords.iter().any(|k| lower.contains(&k.to_lowercase()))
    }

    /// Indices of rig joints passing the whitelist, in rig order.
    pub fn resolve<T: Real>(&self, rig: &RigState<T>) -> Result<Vec<usize>> {
        self.validate()?;
        let idx: Vec<usize> = (0..rig.len()).filter(|&i| self.allows(&rig.joints[i].name)).collect();
        if idx.is_empty() {
            return Err(Error::NoWhitelistJoint(self.describe()));
        }
        Ok(idx)
    }

    fn describe(&self) -> String {
        let mut parts = self.names.clone();
        parts.extend(self.keywords.iter().map(|k| format!("*{k}*")));
        parts.join(", ")
    }
}

impl Default for JointWhitelist {
    fn default() -> Self {
        Self::trunk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub strength: f64,
    pub iterations: usize,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self {
            strength: 0.1,
            iterations: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalizeConfig {
    /// Number of whitelisted joints nearest the organ centroid.
    pub support_k: usize,
    /// Weight regularizer in cm².
    pub epsilon: f64,
    pub smoothing: Option<Smoothing>,
}

impl Default for CanonicalizeConfig {
    fn default() -> Self {
        Self {
            support_k: 3,
            epsilon: 1e-4,
            smoothing: Some(Smoothing::default()),
        }
    }
}

impl CanonicalizeConfig {
    pub fn without_smoothing(mut self) -> Self {
        self.smoothing = None;
        self
    }
}

/// Whitelisted joints nearest `point` in the posed rig; ties go to the lower index.
pub fn support_joints<T: Real>(
    rig: &RigState<T>,
    whitelist: &JointWhitelist,
    point: &Vector3<T>,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("support size must be at least 1".into()));
    }
    let mut idx = whitelist.resolve(rig)?;
    let dist = |i: usize| (rig.joints[i].pose_position() - point).norm_squared();
    idx.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Maps a posed organ surface into the canonical rest-rig space.
pub fn canonicalize_organ<T: Real>(
    mesh: &TriMesh<T>,
    rig: &RigState<T>,
    whitelist: &JointWhitelist,
    config: &CanonicalizeConfig,
) -> Result<TriMesh<T>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(config.epsilon >= 0.0) {
        return Err(Error::InvalidConfig("epsilon must be non-negative".into()));
    }
    let support = support_joints(rig, whitelist, &mesh.centroid(), config.support_k)?;
    let unpose = unposing_transforms(rig)?;
    let transforms: Vec<_> = support.iter().map(|&j| unpose[j]).collect();
    let positions: Vec<_> = support.iter().map(|&j| rig.joints[j].pose_position()).collect();
    let eps = T::lit(config.epsilon);
    let out = mesh.map_vertices(|v| {
        let w = skinning_weights(v, &positions, eps);
        transforms
            .iter()
            .zip(&w)
            .fold(Vector3::zeros(), |acc, (g, &wj)| acc + g.apply(v) * wj)
    });
    Ok(match config.smoothing {
        Some(s) => laplacian_smooth(&out, T::lit(s.strength), s.iterations),
        None => out,
    })
}

/// Uniform-weight Laplacian smoothing `v ← v + λ (mean(N(v)) − v)`.
pub fn laplacian_smooth<T: Real>(mesh: &TriMesh<T>, strength: T, iterations: usize) -> TriMesh<T> {
    let nbrs = mesh.vertex_neighbors();
    let mut verts = mesh.vertices().to_vec();
    for _ in 0..iterations {
        let prev = verts.clone();
        for (i, n) in nbrs.iter().enumerate() {
            if n.is_empty() {
                continue;
            }
            let mean = centroid(&n.iter().map(|&j| prev[j]).collect::<Vec<_>>());
            verts[i] = prev[i] + (mean - prev[i]) * strength;
        }
    }
    mesh.with_vertices(verts).expect("smoothing keeps vertex count")
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct JointRecord<T: Real> {
    name: String,
    parent: Option<usize>,
    rest: [[T; 4]; 4],
    pose: [[T; 4]; 4],
    scale: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct RigRecord<T: Real> {
    #[serde(default = "format_version")]
    format_version: String,
    joints: Vec<JointRecord<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<T>>,
}

impl<T: Real> Serialize for RigState<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RigRecord {
            format_version: format_version(),
            joints: self
                .joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest: j.rest.to_rows(),
                    pose: j.pose.to_rows(),
                    scale: j.scale,
                })
                .collect(),
            beta: self.beta.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for RigState<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = RigRecord::<T>::deserialize(d)?;
        check_format_version(&rec.format_version).map_err(D::Error::custom)?;
        let joints = rec
            .joints
            .into_iter()
            .map(|j| {
                Ok(Joint {
                    name: j.name,
                    parent: j.parent,
                    rest: AffineTransform::from_rows(&j.rest)?,
                    pose: AffineTransform::from_rows(&j.pose)?,
                    scale: j.scale,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        RigState::new(joints, rec.beta).map_err(D::Error::custom)
    }
}

pub fn read_rig<T: Real>(path: &Path) -> Result<RigState<T>> {
    read_json(path)
}

pub fn write_rig<T: Real>(path: &Path, rig: &RigState<T>) -> Result<()> {
    write_json(path, rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, shapes};
    use nalgebra::Matrix3;

    fn joint(name: &str, parent: Option<usize>, rest: AffineTransform<f64>, pose: AffineTransform<f64>) -> Joint<f64> {
        Joint {
            name: name.into(),
            parent,
            rest,
            pose,
            scale: 1.0,
        }
    }

    fn t(x: f64, y: f64, z: f64) -> AffineTransform<f64> {
        AffineTransform::from_translation(Vector3::new(x, y, z))
    }

    #[test]
    fn fk_identity_and_chain() {
        let g = forward_kinematics(&[AffineTransform::<f64>::identity(); 3], &[None, Some(0), Some(1)]).unwrap();
        assert!(g.iter().all(|x| *x == AffineTransform::identity()));
        let g = forward_kinematics(&[t(0.0, 0.0, 1.0), t(0.0, 1.0, 0.0)], &[None, Some(0)]).unwrap();
        assert!((g[1].translation - Vector3::new(0.0, 1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn fk_child_listed_before_parent() {
        let g = forward_kinematics(&[t(1.0, 0.0, 0.0), t(0.0, 0.0, 2.0)], &[Some(1), None]).unwrap();
        assert!((g[0].translation - Vector3::new(1.0, 0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn fk_rejects_cycles() {
        let r = forward_kinematics(&[t(0.0, 0.0, 0.0); 3], &[Some(2), Some(0), Some(1)]);
        assert!(matches!(r, Err(Error::Cycle(_))));
    }

    #[test]
    fn unposing_translation_case() {
        let rest = t(1.0, 2.0, 3.0);
        let pose = rest * t(0.5, -1.0, 2.0);
        let rig = RigState::new(vec![joint("root", None, rest, pose)], None).unwrap();
        let d = unposing_transforms(&rig).unwrap();
        assert!((d[0].translation - Vector3::new(-0.5, 1.0, -2.0)).norm() < 1e-12);
        assert!((d[0].linear - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn weights_examples() {
        let v = Vector3::new(0.0, 0.0, 0.0);
        assert_eq!(skinning_weights(&v, &[Vector3::new(3.0, 0.0, 0.0)], 1e-4), vec![1.0]);
        let w = skinning_weights(&v, &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, -1.0, 0.0)], 1e-4);
        assert!((w[0] - 0.5f64).abs() < 1e-15 && (w[1] - 0.5f64).abs() < 1e-15);
        let w = skinning_weights(&v, &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)], 0.0);
        assert!((w[0] - 0.8f64).abs() < 1e-15 && (w[1] - 0.2f64).abs() < 1e-15);
        let w = skinning_weights(&v, &[v, Vector3::new(0.0, 2.0, 0.0)], 0.0);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn whitelist_keywords() {
        let w = JointWhitelist::trunk();
        assert!(w.allows("spine_upper"));
        assert!(w.allows("Left_Hip"));
        assert!(!w.allows("left_elbow"));
        let rig = RigState::new(vec![joint("hand", None, t(0.0, 0.0, 0.0), t(0.0, 0.0, 0.0))], None).unwrap();
        assert!(matches!(w.resolve(&rig), Err(Error::NoWhitelistJoint(_))));
    }

    #[test]
    fn rest_pose_is_identity_on_vertices() {
        let r = AffineTransform::from_parts(&axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.3), Vector3::new(1.0, 2.0, 0.0), 1.0);
        let rig = RigState::new(
            vec![joint("root", None, r, r), joint("spine", Some(0), t(0.0, 5.0, 0.0), t(0.0, 5.0, 0.0))],
            None,
        )
        .unwrap();
        let m = shapes::icosphere::<f64>(2);
        let c = canonicalize_organ(&m, &rig, &JointWhitelist::trunk(), &CanonicalizeConfig::default().without_smoothing()).unwrap();
        for (a, b) in m.vertices().iter().zip(c.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn rig_json_round_trip() {
        let r = AffineTransform::from_parts(&axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.4), Vector3::new(1.0, 2.0, 3.0), 1.1);
        let rig = RigState::new(
            vec![joint("root", None, r, t(0.0, 1.0, 0.0)), joint("spine", Some(0), t(0.0, 5.0, 0.0), r)],
            Some(vec![0.1, -0.2]),
        )
        .unwrap();
        let text = serde_json::to_string(&rig).unwrap();
        let back: RigState<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(rig, back);
    }

    #[test]
    fn rejects_duplicate_names() {
        let j = joint("a", None, t(0.0, 0.0, 0.0), t(0.0, 0.0, 0.0));
        assert!(RigState::new(vec![j.clone(), j], None).is_err());
    }
}
