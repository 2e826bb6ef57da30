#![allow(dead_code)]

use anatomy_prior::decomposition::ReferenceTemplate;
use anatomy_prior::geometry::{axis_angle, shapes, AffineTransform, TriMesh};
use anatomy_prior::rig::{Joint, RigState};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

pub fn uniform3<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(lo..hi))
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    *nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

/// Rotation by at most `max_deg` about a random axis.
pub fn small_rotation<R: Rng>(rng: &mut R, max_deg: f64) -> Matrix3<f64> {
    let axis = normal3(rng).normalize();
    axis_angle(&axis, rng.random_range(-max_deg..max_deg).to_radians())
}

pub fn random_rigid<R: Rng>(rng: &mut R, max_shift: f64) -> AffineTransform<f64> {
    AffineTransform::from_parts(&random_rotation(rng), uniform3(rng, -max_shift, max_shift), 1.0)
}

/// Tree-shaped rig with random global rest transforms; pose equals rest.
pub fn random_rig<R: Rng>(rng: &mut R, joints: usize) -> RigState<f64> {
    let joints = (0..joints)
        .map(|j| {
            let g = AffineTransform::from_parts(
                &random_rotation(rng),
                uniform3(rng, -20.0, 20.0),
                rng.random_range(0.8..1.25),
            );
            Joint {
                name: format!("spine_{j}"),
                parent: (j > 0).then(|| rng.random_range(0..j)),
                rest: g,
                pose: g,
                scale: 1.0,
            }
        })
        .collect();
    RigState::new(joints, None).unwrap()
}

pub fn rms_diff(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (s / a.len() as f64).sqrt()
}

/// Axis-aligned ellipsoid template with distinct random radii.
pub fn random_ellipsoid<R: Rng>(rng: &mut R, subdivisions: usize) -> TriMesh<f64> {
    let radii = Vector3::new(
        rng.random_range(2.0..4.0),
        rng.random_range(4.5..6.5),
        rng.random_range(7.0..9.0),
    );
    shapes::ellipsoid(uniform3(rng, -10.0, 10.0), radii, subdivisions)
}

pub fn template(organ: &str, mesh: TriMesh<f64>) -> ReferenceTemplate<f64> {
    ReferenceTemplate::new(organ, mesh, "test").unwrap()
}
