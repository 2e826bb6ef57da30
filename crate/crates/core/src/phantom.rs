//! Synthetic cohorts with a known linear placement law.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{AnatomicalFrame, FrameCues, ReferenceTemplate};
use crate::error::{Error, Result};
use crate::format::{check_format_version, format_version, read_json, write_json};
use crate::geometry::{axis_angle, read_obj, shapes, write_obj, AffineTransform, TriMesh};
use crate::instantiation::instantiate_local;
use crate::prior::FeatureSpec;
use crate::rig::{read_rig, write_rig, Joint, RigState};
use crate::scalar::Real;

/// Uniform ranges (cm) of the skeletal measurements and the per-joint jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkeletonRanges {
    pub hip_width: [f64; 2],
    pub torso_length: [f64; 2],
    pub hip_drop: [f64; 2],
    /// Isotropic per-joint positional noise std (cm).
    pub joint_jitter: f64,
    /// Maximum yaw (degrees) and horizontal offset (cm) of the subject in the scanner.
    pub max_yaw_deg: f64,
    pub max_offset: f64,
}

impl Default for SkeletonRanges {
    fn default() -> Self {
        Self {
            hip_width: [24.0, 34.0],
            torso_length: [40.0, 56.0],
            hip_drop: [6.0, 10.0],
            joint_jitter: 1.0,
            max_yaw_deg: 20.0,
            max_offset: 10.0,
        }
    }
}

/// `Δc = W_c (f − f₀)`, `ℓ = W_ℓ (f − f₀)` with `f₀` the features of the
/// nominal skeleton, plus Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganLaw {
    pub organ: String,
    /// Template centroid in the anatomical frame (cm).
    pub center: [f64; 3],
    /// Template semi-axes (cm).
    pub radii: [f64; 3],
    /// Mean orientation as an axis-angle vector (degrees).
    pub rotation_deg: [f64; 3],
    pub joints: Vec<String>,
    /// 3 rows of length `FeatureSpec::dim`.
    pub dc_weights: Vec<Vec<f64>>,
    pub ell_weights: Vec<Vec<f64>>,
}

impl OrganLaw {
    /// Law with Gaussian weights of std `gain / √d` per output.
    pub fn random<R: Rng>(
        organ: &str,
        center: [f64; 3],
        radii: [f64; 3],
        rotation_deg: [f64; 3],
        joints: &[&str],
        dc_gain: f64,
        ell_gain: f64,
        rng: &mut R,
    ) -> Self {
        let joints: Vec<String> = joints.iter().map(|s| s.to_string()).collect();
        let d = FeatureSpec::new(joints.clone()).dim();
        let mut draw = |gain: f64| -> Vec<Vec<f64>> {
            (0..3)
                .map(|_| {
                    (0..d)
                        .map(|_| gain / (d as f64).sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        };
        let dc_weights = draw(dc_gain);
        let ell_weights = draw(ell_gain);
        Self {
            organ: organ.into(),
            center,
            radii,
            rotation_deg,
            joints,
            dc_weights,
            ell_weights,
        }
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec::new(self.joints.clone())
    }

    fn weights(&self, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = self.feature_spec().dim();
        if rows.len() != 3 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidConfig(format!(
                "law for `{}` needs 3 weight rows of length {d}",
                self.organ
            )));
        }
        Ok(DMatrix::from_fn(3, d, |i, j| rows[i][j]))
    }

    pub fn rotation<T: Real>(&self) -> Matrix3<T> {
        let v = Vector3::from(self.rotation_deg).map(f64::to_radians);
        let angle = v.norm();
        if angle == 0.0 {
            return Matrix3::identity();
        }
        axis_angle(&(v / angle).map(T::lit), T::lit(angle))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub cohort_size: usize,
    pub seed: u64,
    pub skeleton: SkeletonRanges,
    pub organs: Vec<OrganLaw>,
    /// Noise std of Δc (cm) and ℓ.
    pub noise_dc: f64,
    pub noise_ell: f64,
    /// Noise std of the organ orientation (degrees, per axis).
    pub noise_rot_deg: f64,
    pub skin_subdivisions: usize,
    pub organ_subdivisions: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::new(40, 0)
    }
}

impl PhantomConfig {
    /// Two-organ default cohort whose law weights are drawn from `seed`.
    pub fn new(cohort_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a77);
        let organs = vec![
            OrganLaw::random(
                "liver",
                [7.0, 26.0, 3.0],
                [9.0, 6.0, 7.0],
                [0.0, 0.0, -10.0],
                &["spine_mid", "right_hip", "spine_upper"],
                0.8,
                0.03,
                &mut rng,
            ),
            OrganLaw::random(
                "kidney_left",
                [-5.5, 20.0, -6.0],
                [3.0, 5.5, 2.5],
                [0.0, 0.0, 12.0],
                &["spine_mid", "left_hip", "root"],
                0.8,
                0.03,
                &mut rng,
            ),
        ];
        Self {
            cohort_size,
            seed,
            skeleton: SkeletonRanges::default(),
            organs,
            noise_dc: 0.5,
            noise_ell: 0.02,
            noise_rot_deg: 2.0,
            skin_subdivisions: 4,
            organ_subdivisions: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort_size < 2 {
            return Err(Error::InvalidConfig("cohort size must be at least 2".into()));
        }
        if !(self.noise_dc >= 0.0 && self.noise_ell >= 0.0 && self.noise_rot_deg >= 0.0) {
            return Err(Error::InvalidConfig("noise std must be non-negative".into()));
        }
        let s = &self.skeleton;
        for (name, r) in [("hip_width", s.hip_width), ("torso_length", s.torso_length), ("hip_drop", s.hip_drop)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!("{name} range must be positive and ordered")));
            }
        }
        if self.organs.is_empty() {
            return Err(Error::InvalidConfig("no organ laws".into()));
        }
        for law in &self.organs {
            law.weights(&law.dc_weights)?;
            law.weights(&law.ell_weights)?;
            if law.radii.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::InvalidConfig(format!("radii of `{}` must be positive", law.organ)));
            }
        }
        Ok(())
    }
}

/// Ground-truth organ parameters in the anatomical frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OrganTruth<T: Real> {
    #[serde(with = "crate::format::vec3_array")]
    pub delta_c: Vector3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub ell: Vector3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub rotation: Matrix3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomOrgan<T: Real> {
    pub organ: String,
    /// World-space mesh in template connectivity.
    pub mesh: TriMesh<T>,
    pub truth: OrganTruth<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase<T: Real> {
    pub id: String,
    pub rig: RigState<T>,
    pub frame: AnatomicalFrame<T>,
    pub skin: TriMesh<T>,
    pub skeleton: TriMesh<T>,
    pub organs: Vec<PhantomOrgan<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCohort<T: Real> {
    pub config: PhantomConfig,
    pub templates: Vec<ReferenceTemplate<T>>,
    pub cases: Vec<PhantomCase<T>>,
}

pub const PHANTOM_FRAME_ID: &str = "phantom-acs";

struct Skeleton {
    hip_width: f64,
    torso_length: f64,
    hip_drop: f64,
    jitter: [Vector3<f64>; 6],
}

const JOINTS: [(&str, Option<usize>); 6] = [
    ("root", None),
    ("left_hip", Some(0)),
    ("right_hip", Some(0)),
    ("spine_mid", Some(0)),
    ("spine_upper", Some(3)),
    ("neck", Some(4)),
];

impl Skeleton {
    fn nominal(r: &SkeletonRanges) -> Self {
        let mid = |x: [f64; 2]| 0.5 * (x[0] + x[1]);
        Self {
            hip_width: mid(r.hip_width),
            torso_length: mid(r.torso_length),
            hip_drop: mid(r.hip_drop),
            jitter: [Vector3::zeros(); 6],
        }
    }

    fn sample<R: Rng>(r: &SkeletonRanges, rng: &mut R) -> Self {
        let mut u = |x: [f64; 2]| rng.random_range(x[0]..=x[1]);
        let (hip_width, torso_length, hip_drop) = (u(r.hip_width), u(r.torso_length), u(r.hip_drop));
        let mut jitter = [Vector3::zeros(); 6];
        for j in &mut jitter {
            *j = Vector3::from_fn(|_, _| r.joint_jitter * rng.sample::<f64, _>(StandardNormal));
        }
        Self {
            hip_width,
            torso_length,
            hip_drop,
            jitter,
        }
    }

    /// Joint positions with x from left to right hip, y up and z anterior.
    fn positions(&self) -> [Vector3<f64>; 6] {
        let (w, l, h) = (self.hip_width, self.torso_length, self.hip_drop);
        let base = [
            Vector3::zeros(),
            Vector3::new(-0.5 * w, -h, 0.0),
            Vector3::new(0.5 * w, -h, 0.0),
            Vector3::new(0.0, 0.5 * l, -2.0),
            Vector3::new(0.0, l, -3.0),
            Vector3::new(0.0, l + 8.0, -2.0),
        ];
        std::array::from_fn(|i| base[i] + self.jitter[i])
    }

    fn rig<T: Real>(&self, placement: &AffineTransform<f64>) -> Result<RigState<T>> {
        let p = self.positions();
        let joints = JOINTS
            .iter()
            .zip(p)
            .map(|((name, parent), pos)| {
                let g = AffineTransform::<f64>::from_translation(pos).then(placement);
                let g = AffineTransform {
                    linear: g.linear.map(T::lit),
                    translation: g.translation.map(T::lit),
                };
                Joint {
                    name: name.to_string(),
                    parent: *parent,
                    rest: g,
                    pose: g,
                    scale: T::one(),
                }
            })
            .collect();
        RigState::new(joints, None)
    }
}

/// Boxes around every bone, 1 cm beyond the joint positions.
fn skeleton_mesh<T: Real>(rig: &RigState<T>) -> TriMesh<T> {
    let pad = Vector3::repeat(T::one());
    let boxes: Vec<_> = rig
        .joints()
        .iter()
        .filter_map(|j| {
            let parent = &rig.joints()[j.parent?];
            let (a, b) = (j.rest_position(), parent.rest_position());
            Some(shapes::box_mesh(a.inf(&b) - pad, a.sup(&b) + pad))
        })
        .collect();
    TriMesh::concat(&boxes)
}

fn templates<T: Real>(config: &PhantomConfig) -> Result<Vec<ReferenceTemplate<T>>> {
    config
        .organs
        .iter()
        .map(|law| {
            let mesh = shapes::ellipsoid(
                Vector3::from(law.center).map(T::lit),
                Vector3::from(law.radii).map(T::lit),
                config.organ_subdivisions,
            );
            let anterior = (0..mesh.vertex_count())
                .max_by(|&a, &b| {
                    mesh.vertices()[a]
                        .z
                        .partial_cmp(&mesh.vertices()[b].z)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            let landmarks = BTreeMap::from([("anterior_pole".to_string(), vec![anterior])]);
            ReferenceTemplate::new(law.organ.clone(), mesh, PHANTOM_FRAME_ID)?.with_landmarks(landmarks)
        })
        .collect()
}

fn generate_case<T: Real>(
    config: &PhantomConfig,
    index: usize,
    templates: &[ReferenceTemplate<T>],
    nominal: &[DVector<f64>],
) -> Result<PhantomCase<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let sk = Skeleton::sample(&config.skeleton, &mut rng);
    let yaw = rng.random_range(-1.0..=1.0) * config.skeleton.max_yaw_deg.to_radians();
    let off = config.skeleton.max_offset;
    let shift = Vector3::new(rng.random_range(-off..=off), 0.0, rng.random_range(-off..=off));
    let placement = AffineTransform::from_parts(&axis_angle(&Vector3::y(), yaw), shift, 1.0);
    let rig = sk.rig::<T>(&placement)?;
    let frame = AnatomicalFrame::from_rig(&rig, &FrameCues::default())?;
    let rig64 = sk.rig::<f64>(&placement)?;
    let frame64 = AnatomicalFrame::from_rig(&rig64, &FrameCues::default())?;

    let dc_noise = Normal::new(0.0, config.noise_dc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let ell_noise = Normal::new(0.0, config.noise_ell).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rot_noise = Normal::new(0.0, config.noise_rot_deg.to_radians()).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut organs = Vec::with_capacity(config.organs.len());
    for ((law, template), f0) in config.organs.iter().zip(templates).zip(nominal) {
        let f = law.feature_spec().features_for_rig(&rig64, &frame64)?;
        let df = f - f0;
        let mut draw = |d: &Normal<f64>| Vector3::from_fn(|_, _| d.sample(&mut rng));
        let delta_c = law.weights(&law.dc_weights)? * &df;
        let ell = law.weights(&law.ell_weights)? * &df;
        let delta_c = Vector3::new(delta_c[0], delta_c[1], delta_c[2]) + draw(&dc_noise);
        let ell = Vector3::new(ell[0], ell[1], ell[2]) + draw(&ell_noise);
        let w = draw(&rot_noise);
        let jitter = if w.norm() > 0.0 {
            axis_angle(&w.normalize(), w.norm())
        } else {
            Matrix3::identity()
        };
        let rotation = jitter * law.rotation::<f64>();
        let (delta_c, ell, rotation) = (delta_c.map(T::lit), ell.map(T::lit), rotation.map(T::lit));
        let local = instantiate_local(template, &delta_c, &ell, &rotation)?;
        organs.push(PhantomOrgan {
            organ: law.organ.clone(),
            mesh: frame.to_world(&local),
            truth: OrganTruth { delta_c, ell, rotation },
        });
    }

    let (w, l) = (T::lit(sk.hip_width), T::lit(sk.torso_length));
    let half = T::lit(0.5);
    let radii = Vector3::new((w * half + T::lit(16.0)).max(T::lit(26.0)), l * half + T::lit(16.0), T::lit(18.0));
    let skin_local = shapes::ellipsoid(Vector3::new(T::zero(), l * half, T::zero()), radii, config.skin_subdivisions);
    let skeleton = skeleton_mesh(&rig);
    Ok(PhantomCase {
        id: format!("case_{index:03}"),
        frame,
        skin: frame.to_world(&skin_local),
        skeleton,
        rig,
        organs,
    })
}

/// Deterministic cohort for a given configuration.
pub fn generate_phantom_cohort<T: Real>(config: &PhantomConfig) -> Result<PhantomCohort<T>> {
    config.validate()?;
    let templates = templates::<T>(config)?;
    let nominal_rig = Skeleton::nominal(&config.skeleton).rig::<f64>(&AffineTransform::identity())?;
    let nominal_frame = AnatomicalFrame::from_rig(&nominal_rig, &FrameCues::default())?;
    let nominal = config
        .organs
        .iter()
        .map(|law| law.feature_spec().features_for_rig(&nominal_rig, &nominal_frame))
        .collect::<Result<Vec<_>>>()?;
    let cases = (0..config.cohort_size)
        .into_par_iter()
        .map(|i| generate_case(config, i, &templates, &nominal))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomCohort {
        config: config.clone(),
        templates,
        cases,
    })
}

/// Index file at the root of a cohort directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub format_version: String,
    /// Organ name to template OBJ path, relative to the cohort root.
    pub templates: BTreeMap<String, String>,
    /// Organ name to the joints used by the placement law, when known.
    #[serde(default)]
    pub feature_joints: BTreeMap<String, Vec<String>>,
    pub cases: Vec<String>,
    #[serde(default)]
    pub phantom: Option<PhantomConfig>,
}

pub const MANIFEST_FILE: &str = "cohort.json";

impl CohortManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let m: Self = read_json(&root.join(MANIFEST_FILE))?;
        check_format_version(&m.format_version)?;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        write_json(&root.join(MANIFEST_FILE), self)
    }
}

/// Files of one case directory.
#[derive(Clone, Debug)]
pub struct CaseLayout {
    pub dir: PathBuf,
}

impl CaseLayout {
    pub fn new(root: &Path, case: &str) -> Self {
        Self {
            dir: root.join("cases").join(case),
        }
    }

    pub fn rig(&self) -> PathBuf {
        self.dir.join("rig.json")
    }

    pub fn skin(&self) -> PathBuf {
        self.dir.join("skin.obj")
    }

    pub fn skeleton(&self) -> PathBuf {
        self.dir.join("skeleton.obj")
    }

    pub fn organ(&self, organ: &str) -> PathBuf {
        self.dir.join("organs").join(format!("{organ}.obj"))
    }

    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.json")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CaseTruth<T: Real> {
    pub format_version: String,
    pub case: String,
    pub organs: BTreeMap<String, OrganTruth<T>>,
}

impl<T: Real> CaseTruth<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = read_json(path)?;
        check_format_version(&t.format_version)?;
        Ok(t)
    }
}

/// Writes the cohort as `cohort.json`, `templates/` and `cases/<id>/`.
pub fn write_cohort<T: Real>(cohort: &PhantomCohort<T>, root: &Path) -> Result<()> {
    let tdir = root.join("templates");
    let mut templates = BTreeMap::new();
    for t in &cohort.templates {
        let rel = format!("templates/{}.obj", t.organ);
        t.save(&tdir.join(format!("{}.obj", t.organ)))?;
        templates.insert(t.organ.clone(), rel);
    }
    cohort.cases.par_iter().try_for_each(|case| -> Result<()> {
        let layout = CaseLayout::new(root, &case.id);
        std::fs::create_dir_all(&layout.dir)?;
        write_rig(&layout.rig(), &case.rig)?;
        write_obj(&layout.skin(), &case.skin)?;
        write_obj(&layout.skeleton(), &case.skeleton)?;
        for o in &case.organs {
            write_obj(&layout.organ(&o.organ), &o.mesh)?;
        }
        write_json(
            &layout.truth(),
            &CaseTruth {
                format_version: format_version(),
                case: case.id.clone(),
                organs: case.organs.iter().map(|o| (o.organ.clone(), o.truth.clone())).collect(),
            },
        )
    })?;
    CohortManifest {
        format_version: format_version(),
        templates,
        feature_joints: cohort
            .config
            .organs
            .iter()
            .map(|l| (l.organ.clone(), l.joints.clone()))
            .collect(),
        cases: cohort.cases.iter().map(|c| c.id.clone()).collect(),
        phantom: Some(cohort.config.clone()),
    }
    .save(root)
}

/// Reads the rig, skin and organ meshes of a case directory.
pub fn read_case_rig<T: Real>(root: &Path, case: &str) -> Result<RigState<T>> {
    read_rig(&CaseLayout::new(root, case).rig())
}

pub fn read_case_organ<T: Real>(root: &Path, case: &str, organ: &str) -> Result<TriMesh<T>> {
    read_obj(&CaseLayout::new(root, case).organ(organ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::decompose_instance;

    fn small(n: usize, seed: u64) -> PhantomConfig {
        let mut c = PhantomConfig::new(n, seed);
        c.skin_subdivisions = 2;
        c.organ_subdivisions = 2;
        c
    }

    #[test]
    fn deterministic() {
        let a = generate_phantom_cohort::<f64>(&small(3, 7)).unwrap();
        let b = generate_phantom_cohort::<f64>(&small(3, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom_cohort::<f64>(&small(3, 8)).unwrap();
        assert_ne!(a.cases[0].rig, c.cases[0].rig);
    }

    #[test]
    fn noiseless_descriptors_match_truth() {
        let mut cfg = small(4, 1);
        cfg.noise_dc = 0.0;
        cfg.noise_ell = 0.0;
        cfg.noise_rot_deg = 0.0;
        let cohort = generate_phantom_cohort::<f64>(&cfg).unwrap();
        for case in &cohort.cases {
            for (o, t) in case.organs.iter().zip(&cohort.templates) {
                let local = case.frame.to_local(&o.mesh);
                let d = decompose_instance(&local, t, 0.0).unwrap();
                assert!((d.delta_c - o.truth.delta_c).norm() < 1e-9);
                assert!((d.ell - o.truth.ell).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn organs_inside_skin() {
        let cohort = generate_phantom_cohort::<f64>(&small(5, 3)).unwrap();
        for case in &cohort.cases {
            let skin_box = case.skin.aabb();
            for o in &case.organs {
                let b = o.mesh.aabb();
                assert_eq!(skin_box.intersection(&b).map(|i| i.volume()), Some(b.volume()));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_phantom_cohort::<f64>(&small(1, 0)).is_err());
        let mut c = small(3, 0);
        c.noise_dc = -1.0;
        assert!(generate_phantom_cohort::<f64>(&c).is_err());
    }
}
