mod common;

use anatomy_prior::decomposition::AnatomicalFrame;
use anatomy_prior::geometry::{shapes, TriangleBvh};
use anatomy_prior::targeting::{
    gather_candidates, plan_contacts, probe_pose, project_to_surface, ContactCandidate, ControlState, TargetingConfig,
};
use anatomy_prior::Error;
use common::*;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn skin() -> anatomy_prior::geometry::TriMesh<f64> {
    shapes::icosphere::<f64>(4).map_vertices(|v| v * 10.0)
}

#[test]
fn projection_hits_the_anterior_surface() {
    let p = project_to_surface(&Vector3::zeros(), &AnatomicalFrame::identity(), &skin()).unwrap();
    assert!((p - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-9);
    let outside = Vector3::new(0.0, 0.0, 20.0);
    assert!(matches!(
        project_to_surface(&outside, &AnatomicalFrame::identity(), &skin()),
        Err(Error::ProjectionMiss)
    ));
}

proptest! {
    #[test]
    fn gathered_candidates_match_brute_filter(cx in -8.0..8.0f64, cy in -8.0..8.0f64, radius in 1.0..12.0f64, seed in 0u64..8) {
        let frame = AnatomicalFrame::new(Vector3::zeros(), random_rotation(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        let skin = skin();
        let center = frame.point_to_world(&Vector3::new(cx, cy, 10.0));
        let normals = skin.vertex_normals();
        let brute: Vec<usize> = (0..skin.vertex_count())
            .filter(|&i| (skin.vertices()[i] - center).norm() <= radius && normals[i].dot(&frame.axis(2)) > 0.0)
            .collect();
        match gather_candidates(&skin, &center, radius, &frame) {
            Ok(c) => prop_assert_eq!(c.iter().map(|x| x.0).collect::<Vec<_>>(), brute),
            Err(Error::EmptyCandidates { .. }) => prop_assert!(brute.is_empty()),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn best_contact_faces_the_target() {
    let frame = AnatomicalFrame::identity();
    let cfg = TargetingConfig::default();
    let top = plan_contacts(&Vector3::zeros(), &frame, &skin(), None, &cfg).unwrap();
    assert_eq!(top.len(), 3);
    assert!(top[0].s_align > 0.999);
    assert!(top.windows(2).all(|w| w[0].s >= w[1].s));
    for c in &top {
        assert_eq!(c.s_skel, 1.0);
        assert!((c.r.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn bone_in_the_path_zeroes_the_clearance() {
    let frame = AnatomicalFrame::identity();
    let bone = shapes::box_mesh(Vector3::new(-0.5, -0.5, 4.0), Vector3::new(0.5, 0.5, 5.0));
    let bvh = TriangleBvh::build(&bone);
    let cfg = TargetingConfig {
        radius: 2.0,
        delta_skel: 1.0,
        k_cand: 100,
    };
    let all = plan_contacts(&Vector3::zeros(), &frame, &skin(), Some(&bvh), &cfg).unwrap();
    let apex = all
        .iter()
        .find(|c| (c.q - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-9)
        .unwrap();
    assert_eq!(apex.s_skel, 0.0);
    assert_eq!(apex.s, 0.0);
    assert!(all[0].s > 0.0);
}

#[test]
fn probe_pose_is_a_proper_frame_along_the_ray() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let frame = AnatomicalFrame::new(uniform3(&mut rng, -5.0, 5.0), random_rotation(&mut rng)).unwrap();
        let r = normal3(&mut rng).normalize();
        let c = ContactCandidate {
            q: uniform3(&mut rng, -5.0, 5.0),
            n: -r,
            r,
            s_align: 1.0,
            s_skel: 1.0,
            s: 1.0,
            source_index: 0,
        };
        let pose = probe_pose(&c, &frame);
        let m = pose.rotation;
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
        assert!((m.column(2) + r).norm() < 1e-12);
        assert!(m.column(1).dot(&frame.axis(1)) >= 0.0);
        assert_eq!(pose.position, c.q);
    }
}

#[test]
fn control_state_survives_json() {
    let c = ContactCandidate {
        q: Vector3::new(1.0, 2.0, 3.0),
        n: Vector3::z(),
        r: -Vector3::z(),
        s_align: 1.0,
        s_skel: 0.5,
        s: 0.5,
        source_index: 7,
    };
    let state = ControlState {
        format_version: anatomy_prior::format::format_version(),
        organ: "liver".into(),
        mesh_ref: "liver.obj".into(),
        pose6dof: vec![probe_pose(&c, &AnatomicalFrame::identity())],
        candidates: vec![c],
        r_bar: Matrix3::identity(),
        sigma_dc: Matrix3::identity() * 0.25,
        sigma2_pos: Vector3::repeat(0.1),
        sigma2_scale: Vector3::repeat(0.01),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    state.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"R_bar\"") && text.contains("\"Sigma_dc\""));
    assert_eq!(ControlState::<f64>::load(&path).unwrap(), state);
}
