mod common;

use anatomy_prior::geometry::primitives::{closest_point_on_triangle, ray_triangle};
use anatomy_prior::geometry::{
    kabsch_align, marching_cubes, parse_obj, rotation_angle_between, shapes, to_obj_string, AffineTransform, IsoParams,
    KdTree, TriMesh, TriangleBvh, VoxelLabelGrid,
};
use approx::assert_relative_eq;
use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn bumpy_sphere(seed: u64) -> TriMesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = shapes::icosphere::<f64>(2);
    let scale: Vec<f64> = (0..s.vertex_count()).map(|_| rng.random_range(2.0..3.0)).collect();
    s.with_vertices(s.vertices().iter().zip(&scale).map(|(v, k)| v * *k).collect())
        .unwrap()
}

fn brute_closest(mesh: &TriMesh<f64>, p: &Vector3<f64>) -> f64 {
    (0..mesh.face_count())
        .map(|f| (closest_point_on_triangle(p, &mesh.triangle(f)) - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn bvh_closest_point_matches_scan(p in vec3(), seed in 0u64..8) {
        let mesh = bumpy_sphere(seed);
        let hit = TriangleBvh::build(&mesh).closest_point(&p).unwrap();
        prop_assert!((hit.distance_squared - brute_closest(&mesh, &p)).abs() <= 1e-9);
    }

    #[test]
    fn bvh_ray_matches_scan(o in vec3(), d in vec3(), seed in 0u64..8) {
        prop_assume!(d.norm() > 1e-3);
        let mesh = bumpy_sphere(seed);
        let brute = (0..mesh.face_count())
            .filter_map(|f| ray_triangle(&o, &d, &mesh.triangle(f)))
            .fold(f64::INFINITY, f64::min);
        match TriangleBvh::build(&mesh).first_hit(&o, &d) {
            Some(h) => prop_assert!((h.lambda - brute).abs() <= 1e-9 * brute.max(1.0)),
            None => prop_assert!(brute.is_infinite()),
        }
    }

    #[test]
    fn kdtree_nearest_matches_scan(q in vec3(), seed in 0u64..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = (0..200).map(|_| uniform3(&mut rng, -10.0, 10.0)).collect();
        let (_, d2) = KdTree::build(&pts).nearest(&q).unwrap();
        let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d2, brute);
    }

    #[test]
    fn transform_then_matches_sequential_apply(p in vec3(), seed in 0u64..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_rigid(&mut rng, 5.0);
        let b = AffineTransform::from_parts(&random_rotation(&mut rng), uniform3(&mut rng, -5.0, 5.0), 1.7);
        let direct = b.apply(&a.apply(&p));
        prop_assert!((a.then(&b).apply(&p) - direct).norm() < 1e-9);
        let inv = a.then(&b).try_inverse().unwrap();
        prop_assert!((inv.apply(&direct) - p).norm() < 1e-9);
    }
}

#[test]
fn kabsch_is_generic_over_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_rotation(&mut rng);
    let src: Vec<_> = (0..30).map(|_| uniform3(&mut rng, -1.0, 1.0)).collect();
    let dst: Vec<_> = src.iter().map(|p| r * p + Vector3::new(1.0, 2.0, 3.0)).collect();
    let to32 = |v: &[Vector3<f64>]| v.iter().map(|p| p.map(|x| x as f32)).collect::<Vec<_>>();
    let a = kabsch_align(&to32(&src), &to32(&dst)).unwrap();
    assert!(rotation_angle_between(&a.rotation, &r.map(|x| x as f32)) < 1e-4);
    assert!((a.translation - Vector3::new(1.0f32, 2.0, 3.0)).norm() < 1e-4);
}

#[test]
fn kabsch_rejects_collinear_points() {
    let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    assert!(kabsch_align(&pts, &pts).is_err());
}

#[test]
fn obj_round_trip_is_exact() {
    let mesh = bumpy_sphere(4);
    let back: TriMesh<f64> = parse_obj(&to_obj_string(&mesh)).unwrap();
    assert_eq!(back.faces(), mesh.faces());
    assert_eq!(back.vertices(), mesh.vertices());
}

#[test]
fn closed_shapes_have_consistent_volume() {
    let cube = shapes::unit_cube::<f64>();
    assert_relative_eq!(cube.signed_volume(), 1.0, epsilon = 1e-12);
    let e = shapes::ellipsoid::<f64>(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0), 4);
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 6.0;
    assert!((e.signed_volume() - exact).abs() / exact < 0.01);
    assert!(e.topology_report().is_closed_manifold());
    assert_eq!(shapes::uv_sphere::<f64>(51, 100).face_count(), 10_000);
}

#[test]
fn marching_cubes_recovers_a_ball() {
    let n = 48;
    let spacing = 2.0;
    let c = (n as f64 - 1.0) / 2.0;
    let radius_vox = 15.0;
    let labels: Vec<u32> = (0..n * n * n)
        .map(|idx| {
            let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
            let d = Vector3::new(i as f64 - c, j as f64 - c, k as f64 - c).norm();
            u32::from(d <= radius_vox)
        })
        .collect();
    let grid = VoxelLabelGrid::with_spacing([n, n, n], [spacing; 3], labels).unwrap();
    let params = IsoParams {
        step: 1,
        min_voxels: 10,
        ..IsoParams::organ()
    };
    let mesh: TriMesh<f64> = marching_cubes(&grid, 1, &params).unwrap();
    assert!(mesh.topology_report().is_closed_manifold());
    let r_cm = radius_vox * spacing / 10.0;
    let exact = 4.0 / 3.0 * std::f64::consts::PI * r_cm.powi(3);
    let vol = mesh.signed_volume().abs();
    assert!((vol - exact).abs() / exact < 0.1, "volume {vol} vs {exact}");
}
