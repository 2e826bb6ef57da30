mod common;

use anatomy_prior::decomposition::{decompose_instance, iqr_bounds, iqr_filter, quantile, AnatomicalFrame, FrameCues};
use anatomy_prior::geometry::{axis_angle, AffineTransform};
use anatomy_prior::instantiation::instantiate_local;
use anatomy_prior::prior::{chordal_mean, extract_features, fit_linear, fit_priors, FeatureSpec, TrainingRecord};
use anatomy_prior::rig::{forward_kinematics, skinning_weights, Joint, RigState};
use anatomy_prior::Error;
use approx::assert_relative_eq;
use common::*;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trunk_rig(seed: u64) -> RigState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let place = random_rigid(&mut rng, 20.0);
    let w = rng.random_range(20.0..35.0);
    let l = rng.random_range(35.0..60.0);
    let pos = [
        ("root", None, Vector3::zeros()),
        ("left_hip", Some(0), Vector3::new(-w / 2.0, -8.0, 0.0)),
        ("right_hip", Some(0), Vector3::new(w / 2.0, -8.0, 0.0)),
        ("spine_upper", Some(0), Vector3::new(0.0, l, -3.0)),
    ];
    let joints = pos
        .iter()
        .map(|(name, parent, p)| {
            let g = AffineTransform::from_translation(p + normal3(&mut rng)).then(&place);
            Joint {
                name: name.to_string(),
                parent: *parent,
                rest: g,
                pose: g,
                scale: 1.0,
            }
        })
        .collect();
    RigState::new(joints, None).unwrap()
}

proptest! {
    #[test]
    fn skinning_weights_are_a_partition_of_unity(
        v in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
        seed in 0u64..100,
        eps in 0.0..1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joints: Vec<_> = (0..rng.random_range(1..6)).map(|_| uniform3(&mut rng, -5.0, 5.0)).collect();
        let w = skinning_weights(&Vector3::new(v.0, v.1, v.2), &joints, eps);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn frame_is_proper_and_invertible(seed in 0u64..200, p in (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64)) {
        let frame = AnatomicalFrame::from_rig(&trunk_rig(seed), &FrameCues::default()).unwrap();
        let r = frame.rotation;
        prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        let p = Vector3::new(p.0, p.1, p.2);
        prop_assert!((frame.point_to_world(&frame.point_to_local(&p)) - p).norm() < 1e-9);
    }
}

#[test]
fn coincident_vertex_shares_weight_without_regularizer() {
    let joints = [Vector3::zeros(), Vector3::zeros(), Vector3::x()];
    assert_eq!(skinning_weights(&Vector3::zeros(), &joints, 0.0), vec![0.5, 0.5, 0.0]);
}

#[test]
fn forward_kinematics_composes_down_the_chain() {
    let t = |x: f64| AffineTransform::from_translation(Vector3::new(x, 0.0, 0.0));
    let rot = AffineTransform::from_parts(&axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2), Vector3::zeros(), 1.0);
    let g = forward_kinematics(&[rot, t(1.0), t(2.0)], &[None, Some(0), Some(1)]).unwrap();
    // child translation is expressed in the parent's rotated frame
    let origin = g[2].apply(&Vector3::zeros());
    assert!((origin - Vector3::new(0.0, 3.0, 0.0)).norm() < 1e-12);
    assert!(forward_kinematics(&[t(0.0), t(0.0)], &[Some(1), Some(0)]).is_err());
}

#[test]
fn rig_rejects_duplicate_names() {
    let j = Joint {
        name: "root".to_string(),
        parent: None,
        rest: AffineTransform::identity(),
        pose: AffineTransform::identity(),
        scale: 1.0,
    };
    assert!(matches!(RigState::new(vec![j.clone(), j], None), Err(Error::InvalidRig(_))));
}

#[test]
fn hand_computed_features() {
    let spec = FeatureSpec::new(vec!["a".into(), "b".into(), "c".into()]);
    let joints = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)];
    let f = extract_features(&joints, &spec, None).unwrap();
    let expected = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 2.0, 5f64.sqrt(), 0.0];
    assert_eq!(spec.dim(), 10);
    assert_eq!(f.as_slice(), &expected);
}

#[test]
fn quantiles_and_fences() {
    let v = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    assert_eq!(iqr_bounds(&v, 1.5), (-0.5, 5.5));
}

#[test]
fn iqr_filter_drops_the_outlier() {
    let t = template("organ", shapes_ellipsoid());
    let mut descriptors: Vec<_> = (0..8)
        .map(|i| {
            let ell = Vector3::repeat(0.01 * i as f64);
            let inst = instantiate_local(&t, &Vector3::zeros(), &ell, &Matrix3::identity()).unwrap();
            decompose_instance(&inst, &t, 0.0).unwrap()
        })
        .collect();
    descriptors[3].volume_ratio = 40.0;
    let keep = iqr_filter(&descriptors, 1.5);
    assert_eq!(keep.iter().filter(|k| !**k).count(), 1);
    assert!(!keep[3]);
}

fn shapes_ellipsoid() -> anatomy_prior::geometry::TriMesh<f64> {
    anatomy_prior::geometry::shapes::ellipsoid(Vector3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 3.0, 4.0), 2)
}

#[test]
fn ols_recovers_an_exact_linear_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, d) = (30, 6);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let w = DMatrix::from_fn(3, d, |_, _| rng.random_range(-2.0..2.0));
    let b = Vector3::new(0.5, -1.0, 2.0);
    let y = DMatrix::from_fn(n, 3, |i, k| (w.row(k) * x.row(i).transpose())[0] + b[k]);
    let head = fit_linear(&x, &y, 0.0).unwrap();
    assert!((&head.weights - &w).amax() < 1e-9);
    assert!((head.bias - b).amax() < 1e-9);
}

#[test]
fn ridge_matches_augmented_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d, lambda) = (12, 4, 0.7f64);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let head = fit_linear(&x, &y, lambda).unwrap();

    // ridge with a free intercept is least squares on the centered design
    // stacked over sqrt(lambda) I
    let xm = x.row_mean();
    let ym = y.row_mean();
    let mut a = DMatrix::zeros(n + d, d);
    let mut rhs = DMatrix::zeros(n + d, 3);
    for i in 0..n {
        a.set_row(i, &(x.row(i) - &xm));
        rhs.set_row(i, &(y.row(i) - &ym));
    }
    for j in 0..d {
        a[(n + j, j)] = lambda.sqrt();
    }
    let w_t = a.svd(true, true).solve(&rhs, 1e-14).unwrap();
    assert!((&head.weights - w_t.transpose()).amax() < 1e-10);
    let b = ym - (&head.weights * xm.transpose()).transpose();
    assert!((head.bias - Vector3::new(b[0], b[1], b[2])).amax() < 1e-10);
}

#[test]
fn ols_rejects_rank_deficient_design() {
    let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
    let y = DMatrix::from_fn(10, 3, |i, _| i as f64);
    assert!(matches!(fit_linear(&x, &y, 0.0), Err(Error::SingularFit { .. })));
    assert!(fit_linear(&x, &y, 0.1).is_ok());
}

#[test]
fn chordal_mean_of_symmetric_spread() {
    let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
    let center = 0.4;
    let rots: Vec<_> = [-0.3, -0.1, 0.1, 0.3]
        .iter()
        .map(|a| axis_angle(&axis, center + a))
        .collect();
    let mean = chordal_mean(&rots);
    assert_relative_eq!(mean, axis_angle(&axis, center), epsilon = 1e-12);
}

#[test]
fn fitted_prior_reproduces_training_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = FeatureSpec::new(vec!["a".into(), "b".into()]);
    let d = spec.dim();
    let w = DMatrix::from_fn(3, d, |_, _| rng.random_range(-1.0..1.0));
    let records: Vec<_> = (0..20)
        .map(|_| {
            let f = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let y = &w * &f;
            TrainingRecord {
                features: f,
                delta_c: Vector3::new(y[0], y[1], y[2]),
                ell: Vector3::new(y[0], y[1], y[2]) * 0.01,
                rotation: Matrix3::identity(),
            }
        })
        .collect();
    let asset = fit_priors("liver", &spec, &records, 0.0).unwrap();
    for r in &records {
        let p = asset.predict(&r.features).unwrap();
        assert!((p.delta_c - r.delta_c).amax() < 1e-9);
        assert!((p.scale - r.ell.map(f64::exp)).amax() < 1e-9);
    }
    assert!(asset.sigma2_pos.amax() < 1e-18);
    assert_eq!(asset.r_bar, Matrix3::identity());
    assert!(asset.validate().is_ok());
}
