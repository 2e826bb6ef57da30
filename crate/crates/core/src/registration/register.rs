//! Three-stage template-to-target registration.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::energies::{chamfer_with_gradient, sample_points, scatter_sample_gradient, Regularizers};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, SurfaceSample, TriMesh, TriangleBvh};
use crate::scalar::Real;

/// Per-vertex offsets plus a global translation applied to a template.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationState<T: Real> {
    pub offsets: Vec<Vector3<T>>,
    pub translation: Vector3<T>,
}

impl<T: Real> DeformationState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![Vector3::zeros(); n],
            translation: Vector3::zeros(),
        }
    }

    /// `V + ΔV + 1 tᵀ`.
    pub fn apply(&self, rest: &[Vector3<T>]) -> Vec<Vector3<T>> {
        rest.iter()
            .zip(&self.offsets)
            .map(|(v, d)| v + d + self.translation)
            .collect()
    }

    pub fn offsets_rms(&self) -> T {
        if self.offsets.is_empty() {
            return T::zero();
        }
        let s = self.offsets.iter().fold(T::zero(), |a, d| a + d.norm_squared());
        (s / T::from_count(self.offsets.len())).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    /// Step size for the translation.
    pub step_translation: f64,
    /// Step size for the vertex offsets (gradient scaled by vertex count).
    pub step_offsets: f64,
    /// Multiplier applied to the edge and Laplacian weights.
    pub regularizer_boost: f64,
    pub optimize_offsets: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub lambda_data: f64,
    pub lambda_edge: f64,
    pub lambda_normal: f64,
    pub lambda_lap: f64,
    pub samples: usize,
    pub stages: [StageConfig; 3],
    /// Relative energy decrease below which a stage stops early.
    pub tolerance: f64,
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda_data: 1.0,
            lambda_edge: 0.5,
            lambda_normal: 0.1,
            lambda_lap: 1.0,
            samples: 2048,
            stages: [
                StageConfig {
                    iterations: 100,
                    step_translation: 0.1,
                    step_offsets: 0.0,
                    regularizer_boost: 1.0,
                    optimize_offsets: false,
                },
                StageConfig {
                    iterations: 400,
                    step_translation: 0.1,
                    step_offsets: 0.05,
                    regularizer_boost: 1.0,
                    optimize_offsets: true,
                },
                StageConfig {
                    iterations: 200,
                    step_translation: 0.1,
                    step_offsets: 0.05,
                    regularizer_boost: 4.0,
                    optimize_offsets: true,
                },
            ],
            tolerance: 1e-12,
            max_halvings: 30,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_data, self.lambda_edge, self.lambda_normal, self.lambda_lap];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("energy weights must be finite and non-negative".into()));
        }
        if !(self.lambda_data > 0.0) {
            return Err(Error::InvalidConfig("lambda_data must be positive".into()));
        }
        if self.samples < 64 {
            return Err(Error::InvalidConfig(format!(
                "sample count {} is below the minimum of 64",
                self.samples
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.step_translation >= 0.0) || !(s.step_offsets >= 0.0) || !(s.regularizer_boost >= 0.0) {
                return Err(Error::InvalidConfig(format!("stage {} has a negative parameter", i + 1)));
            }
        }
        Ok(())
    }

    /// Scales every stage's iteration count, keeping at least one.
    pub fn with_iteration_scale(mut self, factor: f64) -> Self {
        for s in &mut self.stages {
            s.iterations = ((s.iterations as f64 * factor).round() as usize).max(1);
        }
        self
    }
}

/// Weighted energy components at one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub data: f64,
    pub edge: f64,
    pub normal: f64,
    pub laplacian: f64,
}

/// One JSON-lines record per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub seed: u64,
    pub initial: EnergyBreakdown,
    #[serde(rename = "final")]
    pub last: EnergyBreakdown,
    pub translation: [f64; 3],
    pub offsets_rms: f64,
    pub rmse_to_target: f64,
    /// Total energy after each accepted step.
    pub energy_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration<T: Real> {
    pub mesh: TriMesh<T>,
    pub state: DeformationState<T>,
    pub stages: Vec<StageDiagnostics>,
}

impl<T: Real> Registration<T> {
    pub fn rmse_to_target(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.rmse_to_target)
    }

    pub fn write_diagnostics(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.stages {
            serde_json::to_writer(&mut f, s)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

struct Problem<'a, T: Real> {
    faces: &'a [[usize; 3]],
    regs: &'a Regularizers<T>,
    samples: Vec<SurfaceSample<T>>,
    target_points: Vec<Vector3<T>>,
    target_tree: KdTree<T>,
    weights: [T; 4],
}

impl<T: Real> Problem<'_, T> {
    fn evaluate(&self, x: &[Vector3<T>], grad: Option<&mut [Vector3<T>]>) -> (T, [T; 4]) {
        if !x.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            let nan = T::lit(f64::NAN);
            return (nan, [nan; 4]);
        }
        let pts = sample_points(x, self.faces, &self.samples);
        let (data, sample_grad) = chamfer_with_gradient(&pts, &self.target_tree, &self.target_points);
        let [wd, we, wn, wl] = self.weights;
        let parts = match grad {
            Some(g) => {
                let mut gd = vec![Vector3::zeros(); x.len()];
                scatter_sample_gradient(self.faces, &self.samples, &sample_grad, &mut gd);
                let mut ge = vec![Vector3::zeros(); x.len()];
                let mut gn = vec![Vector3::zeros(); x.len()];
                let mut gl = vec![Vector3::zeros(); x.len()];
                let e = self.regs.edge(x, Some(&mut ge));
                let n = self.regs.normal(x, Some(&mut gn));
                let l = self.regs.laplacian(x, Some(&mut gl));
                for i in 0..x.len() {
                    g[i] = gd[i] * wd + ge[i] * we + gn[i] * wn + gl[i] * wl;
                }
                [data, e, n, l]
            }
            None => {
                let r = self.regs.values(x);
                [data, r.edge, r.normal, r.laplacian]
            }
        };
        let total = parts[0] * wd + parts[1] * we + parts[2] * wn + parts[3] * wl;
        (total, parts)
    }

    fn breakdown(&self, x: &[Vector3<T>]) -> EnergyBreakdown {
        let (total, p) = self.evaluate(x, None);
        EnergyBreakdown {
            total: total.to_f64_lossy(),
            data: p[0].to_f64_lossy(),
            edge: p[1].to_f64_lossy(),
            normal: p[2].to_f64_lossy(),
            laplacian: p[3].to_f64_lossy(),
        }
    }
}

/// Deforms `template` onto `target`; the output keeps the template's faces.
pub fn register_template<T: Real>(
    template: &TriMesh<T>,
    target: &TriMesh<T>,
    config: &RegistrationConfig,
) -> Result<Registration<T>> {
    config.validate()?;
    if template.face_count() == 0 || target.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    if template.face_count() > 10_000 {
        log::warn!(
            "template has {} faces; registration is tuned for 7000-10000",
            template.face_count()
        );
    }
    let rest = template.vertices();
    let faces = template.faces();
    let n = rest.len();
    let regs = Regularizers::new(template);
    let target_bvh = TriangleBvh::build(target);

    let mut state = DeformationState::zeros(n);
    state.translation = target.centroid() - template.centroid();
    let mut stages = Vec::with_capacity(3);

    for (si, stage) in config.stages.iter().enumerate() {
        let stage_index = si + 1;
        let seed = config.seed.wrapping_add(si as u64);
        let samples = template.sample_surface(config.samples, &mut ChaCha8Rng::seed_from_u64(seed));
        let target_samples = target.sample_surface(config.samples, &mut ChaCha8Rng::seed_from_u64(seed));
        let target_points: Vec<_> = target_samples.iter().map(|s| target.sample_position(s)).collect();
        let boost = T::lit(stage.regularizer_boost);
        let problem = Problem {
            faces,
            regs: &regs,
            samples,
            target_tree: KdTree::build(&target_points),
            target_points,
            weights: [
                T::lit(config.lambda_data),
                T::lit(config.lambda_edge) * boost,
                T::lit(config.lambda_normal),
                T::lit(config.lambda_lap) * boost,
            ],
        };

        let mut x = state.apply(rest);
        let mut grad = vec![Vector3::zeros(); n];
        let mut trial_grad = vec![Vector3::zeros(); n];
        let (mut energy, _) = problem.evaluate(&x, Some(&mut grad));
        if !energy.is_finite() {
            return Err(Error::Divergence {
                stage: stage_index,
                reason: "initial energy is not finite".into(),
            });
        }
        let initial = problem.breakdown(&x);
        let mut trace = Vec::new();
        let mut iterations = 0;
        let scale_offsets = T::from_count(n);
        for _ in 0..stage.iterations {
            iterations += 1;
            let gt = grad.iter().fold(Vector3::zeros(), |a, g| a + g);
            if !gt.iter().all(|c| c.is_finite()) || !grad.iter().all(|g| g.iter().all(|c| c.is_finite())) {
                return Err(Error::Divergence {
                    stage: stage_index,
                    reason: "gradient is not finite".into(),
                });
            }
            let mut factor = T::one();
            let mut accepted = None;
            for _ in 0..=config.max_halvings {
                let mut trial = state.clone();
                trial.translation -= gt * (T::lit(stage.step_translation) * factor);
                if stage.optimize_offsets {
                    let s = T::lit(stage.step_offsets) * factor * scale_offsets;
                    for (d, g) in trial.offsets.iter_mut().zip(&grad) {
                        *d -= g * s;
                    }
                }
                let tx = trial.apply(rest);
                let (te, _) = problem.evaluate(&tx, Some(&mut trial_grad));
                if !te.is_finite() {
                    return Err(Error::Divergence {
                        stage: stage_index,
                        reason: format!("energy became non-finite (step factor {})", factor.to_f64_lossy()),
                    });
                }
                if te <= energy {
                    accepted = Some((trial, tx, te));
                    break;
                }
                factor *= T::lit(0.5);
            }
            let Some((trial, tx, te)) = accepted else {
                break;
            };
            let decrease = energy - te;
            state = trial;
            x = tx;
            energy = te;
            trace.push(energy.to_f64_lossy());
            std::mem::swap(&mut grad, &mut trial_grad);
            if decrease <= T::lit(config.tolerance) * energy.max(T::lit(1e-300)) {
                break;
            }
        }
        stages.push(StageDiagnostics {
            stage: stage_index,
            iterations,
            accepted_steps: trace.len(),
            seed,
            initial,
            last: problem.breakdown(&x),
            translation: [
                state.translation.x.to_f64_lossy(),
                state.translation.y.to_f64_lossy(),
                state.translation.z.to_f64_lossy(),
            ],
            offsets_rms: state.offsets_rms().to_f64_lossy(),
            rmse_to_target: rmse_to_surface(&x, &target_bvh),
            energy_trace: trace,
        });
        log::debug!("registration stage {stage_index}: {:?}", stages.last().map(|s| s.last));
    }

    let mesh = template.with_vertices(state.apply(rest))?;
    Ok(Registration { mesh, state, stages })
}

/// Root-mean-square point-to-surface distance.
pub fn rmse_to_surface<T: Real>(points: &[Vector3<T>], surface: &TriangleBvh<T>) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let s: f64 = points
        .iter()
        .map(|p| surface.closest_point(p).map_or(f64::INFINITY, |c| c.distance_squared.to_f64_lossy()))
        .sum();
    (s / points.len() as f64).sqrt()
}
