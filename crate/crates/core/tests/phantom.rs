use anatomy_prior::phantom::{generate_phantom_cohort, read_case_organ, read_case_rig, write_cohort, PhantomConfig};
use anatomy_prior::prior::fit_linear;
use nalgebra::DMatrix;

fn small(n: usize, seed: u64) -> PhantomConfig {
    PhantomConfig {
        skin_subdivisions: 2,
        organ_subdivisions: 2,
        ..PhantomConfig::new(n, seed)
    }
}

#[test]
fn residual_spread_matches_the_configured_noise() {
    let pc = small(200, 77);
    let cohort = generate_phantom_cohort::<f64>(&pc).unwrap();
    for (k, law) in pc.organs.iter().enumerate() {
        let spec = law.feature_spec();
        let feats: Vec<_> = cohort
            .cases
            .iter()
            .map(|c| spec.features_for_rig(&c.rig, &c.frame).unwrap())
            .collect();
        let n = feats.len();
        let d = spec.dim();
        let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
        for (noise, pick) in [
            (pc.noise_dc, Box::new(|i: usize| cohort.cases[i].organs[k].truth.delta_c) as Box<dyn Fn(usize) -> _>),
            (pc.noise_ell, Box::new(|i: usize| cohort.cases[i].organs[k].truth.ell)),
        ] {
            let y = DMatrix::from_fn(n, 3, |i, c| pick(i)[c]);
            let head = fit_linear(&x, &y, 0.0).unwrap();
            let mut ss = 0.0;
            for (i, f) in feats.iter().enumerate() {
                ss += (head.eval(f).unwrap() - pick(i)).norm_squared();
            }
            let std = (ss / (3 * (n - d - 1)) as f64).sqrt();
            assert!((std - noise).abs() <= 0.2 * noise, "{}: residual std {std} vs {noise}", law.organ);
        }
    }
}

#[test]
fn cohort_is_deterministic_and_survives_disk() {
    let pc = small(4, 5);
    let a = generate_phantom_cohort::<f64>(&pc).unwrap();
    assert_eq!(a, generate_phantom_cohort::<f64>(&pc).unwrap());
    assert_ne!(a.cases[0], generate_phantom_cohort::<f64>(&small(4, 6)).unwrap().cases[0]);
    let dir = tempfile::tempdir().unwrap();
    write_cohort(&a, dir.path()).unwrap();
    let case = &a.cases[2];
    let rig = read_case_rig::<f64>(dir.path(), &case.id).unwrap();
    for (x, y) in rig.joints().iter().zip(case.rig.joints()) {
        assert!((x.rest_position() - y.rest_position()).norm() < 1e-9);
    }
    let liver = read_case_organ::<f64>(dir.path(), &case.id, &case.organs[0].organ).unwrap();
    assert_eq!(liver.faces(), case.organs[0].mesh.faces());
    let err = liver
        .vertices()
        .iter()
        .zip(case.organs[0].mesh.vertices())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-9);
}
