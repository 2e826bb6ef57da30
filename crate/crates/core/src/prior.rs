//! Skeleton-conditioned placement and scale priors.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::decomposition::AnatomicalFrame;
use crate::error::{Error, Result};
use crate::format::{check_format_version, format_version, read_json, write_json};
use crate::rig::{JointWhitelist, RigState};
use crate::scalar::Real;

/// Frozen definition of the skeletal feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Selected joints; the first is the anchor.
    pub joints: Vec<String>,
    pub include_distances: bool,
    pub include_angle: bool,
    /// Number of leading shape coefficients appended.
    #[serde(default)]
    pub k_beta: usize,
}

impl FeatureSpec {
    pub fn new(joints: Vec<String>) -> Self {
        Self {
            joints,
            include_distances: true,
            include_angle: true,
            k_beta: 0,
        }
    }

    fn angle_used(&self) -> bool {
        self.include_angle && self.joints.len() >= 3
    }

    pub fn dim(&self) -> usize {
        let n = self.joints.len();
        let mut d = 3 * n.saturating_sub(1);
        if self.include_distances {
            d += n * n.saturating_sub(1) / 2;
        }
        if self.angle_used() {
            d += 1;
        }
        d + self.k_beta
    }

    /// Features of `rig` with joints expressed in `frame` (rest positions).
    pub fn features_for_rig<T: Real>(&self, rig: &RigState<T>, frame: &AnatomicalFrame<T>) -> Result<DVector<T>> {
        let joints = self
            .joints
            .iter()
            .map(|name| rig.joint(name).map(|j| frame.point_to_local(&j.rest_position())))
            .collect::<Result<Vec<_>>>()?;
        extract_features(&joints, self, rig.beta())
    }
}

/// Whitelisted rest-joint positions of `rig` in `frame`.
pub fn whitelist_positions<T: Real>(
    rig: &RigState<T>,
    whitelist: &JointWhitelist,
    frame: &AnatomicalFrame<T>,
) -> Result<Vec<(String, Vector3<T>)>> {
    Ok(whitelist
        .resolve(rig)?
        .into_iter()
        .map(|i| {
            let j = &rig.joints()[i];
            (j.name.clone(), frame.point_to_local(&j.rest_position()))
        })
        .collect())
}

/// The `n` candidate joints nearest `centroid`, by distance then name.
pub fn select_organ_joints<T: Real>(
    candidates: &[(String, Vector3<T>)],
    centroid: &Vector3<T>,
    n: usize,
) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidConfig("joint count must be at least 1".into()));
    }
    if candidates.len() < n {
        return Err(Error::TooFewJoints {
            needed: n,
            got: candidates.len(),
        });
    }
    let mut order: Vec<(T, &str)> = candidates
        .iter()
        .map(|(name, p)| ((p - centroid).norm(), name.as_str()))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    Ok(order.into_iter().take(n).map(|(_, name)| name.to_string()).collect())
}

/// Offsets to the anchor joint, pairwise distances, the cosine at the
/// anchor, then optional shape coefficients.
pub fn extract_features<T: Real>(joints: &[Vector3<T>], spec: &FeatureSpec, beta: Option<&[T]>) -> Result<DVector<T>> {
    if joints.len() != spec.joints.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.joints.len(),
            got: joints.len(),
        });
    }
    let mut f = Vec::with_capacity(spec.dim());
    if let Some((anchor, rest)) = joints.split_first() {
        for j in rest {
            f.extend((j - anchor).iter().copied());
        }
    }
    if spec.include_distances {
        for a in 0..joints.len() {
            for b in a + 1..joints.len() {
                f.push((joints[a] - joints[b]).norm());
            }
        }
    }
    if spec.include_angle {
        if joints.len() >= 3 {
            let u = joints[1] - joints[0];
            let v = joints[2] - joints[0];
            let (nu, nv) = (u.norm(), v.norm());
            let tiny = T::lit(1e-12);
            f.push(if nu <= tiny || nv <= tiny {
                T::zero()
            } else {
                (u.dot(&v) / (nu * nv)).clamp(-T::one(), T::one())
            });
        } else {
            log::warn!("angle feature needs three joints; omitted");
        }
    }
    if spec.k_beta > 0 {
        let b = beta.unwrap_or(&[]);
        if b.len() < spec.k_beta {
            return Err(Error::DimensionMismatch {
                expected: spec.k_beta,
                got: b.len(),
            });
        }
        f.extend_from_slice(&b[..spec.k_beta]);
    }
    Ok(DVector::from_vec(f))
}

/// One training example after decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRecord<T: Real> {
    pub features: DVector<T>,
    pub delta_c: Vector3<T>,
    pub ell: Vector3<T>,
    pub rotation: Matrix3<T>,
}

/// Affine map `y = W x + b` with `W` of shape 3 × d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearHead<T: Real> {
    #[serde(with = "crate::format::dmatrix_rows")]
    pub weights: DMatrix<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub bias: Vector3<T>,
}

impl<T: Real> LinearHead<T> {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn eval(&self, x: &DVector<T>) -> Result<Vector3<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let y = &self.weights * x;
        Ok(Vector3::new(y[0], y[1], y[2]) + self.bias)
    }
}

/// Fits `Y ≈ X Wᵀ + b` with an unpenalized intercept. `lambda == 0` is
/// ordinary least squares and fails on a rank-deficient design.
pub fn fit_linear<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, lambda: T) -> Result<LinearHead<T>> {
    let n = x.nrows();
    let d = x.ncols();
    if y.nrows() != n || y.ncols() != 3 {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let nt = T::from_count(n);
    let x_mean = x.row_sum() / nt;
    let y_mean = y.row_sum() / nt;
    let mut xc = x.clone();
    for mut r in xc.row_iter_mut() {
        r -= &x_mean;
    }
    let mut yc = y.clone();
    for mut r in yc.row_iter_mut() {
        r -= &y_mean;
    }
    let w_t: DMatrix<T> = if d == 0 {
        DMatrix::zeros(0, 3)
    } else if lambda > T::zero() {
        let mut gram = xc.transpose() * &xc;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = xc.transpose() * &yc;
        gram.cholesky()
            .ok_or(Error::SingularFit { rank: 0, cols: d })?
            .solve(&rhs)
    } else {
        let svd = xc.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * T::from_count(n.max(d)) * T::EPS;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < d {
            return Err(Error::SingularFit { rank, cols: d });
        }
        svd.solve(&yc, tol).map_err(|_| Error::SingularFit { rank, cols: d })?
    };
    let weights = w_t.transpose();
    let b = y_mean - (&weights * x_mean.transpose()).transpose();
    Ok(LinearHead {
        weights,
        bias: Vector3::new(b[0], b[1], b[2]),
    })
}

/// Population covariance of 3-vectors.
pub fn covariance<T: Real>(v: &[Vector3<T>]) -> Matrix3<T> {
    if v.is_empty() {
        return Matrix3::zeros();
    }
    let n = T::from_count(v.len());
    let mean = v.iter().fold(Vector3::zeros(), |a, x| a + x) / n;
    v.iter()
        .fold(Matrix3::zeros(), |a, x| a + (x - mean) * (x - mean).transpose())
        / n
}

/// Projection of the arithmetic mean rotation onto SO(3).
pub fn chordal_mean<T: Real>(rotations: &[Matrix3<T>]) -> Matrix3<T> {
    if rotations.is_empty() {
        return Matrix3::identity();
    }
    let sum = rotations.iter().fold(Matrix3::zeros(), |a, r| a + r);
    project_to_rotation(&sum)
}

pub fn project_to_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), d.signum()));
    u * fix * v_t
}

/// Fitted prior for one organ class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OrganPriorAsset<T: Real> {
    pub format_version: String,
    pub organ: String,
    pub feature_spec: FeatureSpec,
    pub position: LinearHead<T>,
    pub scale: LinearHead<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_pos: Vector3<T>,
    #[serde(with = "crate::format::vec3_array")]
    pub sigma2_scale: Vector3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub sigma_dc: Matrix3<T>,
    #[serde(with = "crate::format::mat3_rows")]
    pub r_bar: Matrix3<T>,
    pub frame_id: String,
    pub reference_frame: AnatomicalFrame<T>,
    pub ridge_lambda: f64,
    pub training_count: usize,
}

/// Regressor outputs for one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorPrediction<T: Real> {
    pub delta_c: Vector3<T>,
    pub ell: Vector3<T>,
    pub scale: Vector3<T>,
}

impl<T: Real> OrganPriorAsset<T> {
    pub fn predict(&self, features: &DVector<T>) -> Result<PriorPrediction<T>> {
        let delta_c = self.position.eval(features)?;
        let ell = self.scale.eval(features)?;
        Ok(PriorPrediction {
            delta_c,
            ell,
            scale: ell.map(|l| l.exp()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_format_version(&self.format_version)?;
        let d = self.feature_spec.dim();
        for head in [&self.position, &self.scale] {
            if head.weights.nrows() != 3 || head.input_dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: head.input_dim(),
                });
            }
        }
        let ortho = (self.r_bar.transpose() * self.r_bar - Matrix3::identity()).norm();
        if ortho > T::lit(1e-9) || self.r_bar.determinant() <= T::zero() {
            return Err(Error::InvalidTransform("mean orientation is not a proper rotation".into()));
        }
        let asym = (self.sigma_dc - self.sigma_dc.transpose()).norm();
        let min_eig = self.sigma_dc.symmetric_eigenvalues().min();
        if asym > T::lit(1e-9) || min_eig < -T::lit(1e-9) {
            return Err(Error::Parse("placement covariance is not symmetric positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let asset: Self = read_json(path)?;
        asset.validate()?;
        Ok(asset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Fits placement and scale regressors plus the uncertainty summaries.
pub fn fit_priors<T: Real>(
    organ: &str,
    spec: &FeatureSpec,
    records: &[TrainingRecord<T>],
    ridge_lambda: f64,
) -> Result<OrganPriorAsset<T>> {
    if !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidConfig("ridge lambda must be non-negative".into()));
    }
    if records.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: records.len(),
        });
    }
    let d = spec.dim();
    if let Some(bad) = records.iter().find(|r| r.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.features.len(),
        });
    }
    let n = records.len();
    let x = DMatrix::from_fn(n, d, |i, j| records[i].features[j]);
    let y_pos = DMatrix::from_fn(n, 3, |i, j| records[i].delta_c[j]);
    let y_scale = DMatrix::from_fn(n, 3, |i, j| records[i].ell[j]);
    let lambda = T::lit(ridge_lambda);
    let position = fit_linear(&x, &y_pos, lambda)?;
    let scale = fit_linear(&x, &y_scale, lambda)?;

    let residual_var = |head: &LinearHead<T>, target: &dyn Fn(&TrainingRecord<T>) -> Vector3<T>| -> Result<Vector3<T>> {
        let res = records
            .iter()
            .map(|r| Ok(target(r) - head.eval(&r.features)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(covariance(&res).diagonal())
    };
    let sigma2_pos = residual_var(&position, &|r| r.delta_c)?;
    let sigma2_scale = residual_var(&scale, &|r| r.ell)?;
    let dcs: Vec<_> = records.iter().map(|r| r.delta_c).collect();
    let rots: Vec<_> = records.iter().map(|r| r.rotation).collect();

    Ok(OrganPriorAsset {
        format_version: format_version(),
        organ: organ.to_string(),
        feature_spec: spec.clone(),
        position,
        scale,
        sigma2_pos,
        sigma2_scale,
        sigma_dc: covariance(&dcs),
        r_bar: chordal_mean(&rots),
        frame_id: String::new(),
        reference_frame: AnatomicalFrame::identity(),
        ridge_lambda,
        training_count: n,
    })
}
