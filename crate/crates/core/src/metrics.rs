//! Placement and extent metrics. Meshes are in centimeters; reported
//! distances are in millimeters.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{format_version, write_json};
use crate::geometry::primitives::solid_angle;
use crate::geometry::{Aabb, TriMesh, TriangleBvh};
use crate::scalar::Real;

const MM_PER_CM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidError {
    pub euclidean_mm: f64,
    pub per_axis_mm: [f64; 3],
}

fn non_empty<T: Real>(mesh: &TriMesh<T>) -> Result<()> {
    if mesh.vertex_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    Ok(())
}

pub fn centroid_error<T: Real>(predicted: &TriMesh<T>, truth: &TriMesh<T>) -> Result<CentroidError> {
    non_empty(predicted)?;
    non_empty(truth)?;
    let d = (predicted.centroid() - truth.centroid()).map(|x| x.to_f64_lossy() * MM_PER_CM);
    Ok(CentroidError {
        euclidean_mm: d.norm(),
        per_axis_mm: [d.x.abs(), d.y.abs(), d.z.abs()],
    })
}

/// Mean relative bounding-box extent error over the three axes, in percent.
pub fn scale_error<T: Real>(predicted: &TriMesh<T>, truth: &TriMesh<T>) -> Result<f64> {
    non_empty(predicted)?;
    non_empty(truth)?;
    let ep = predicted.aabb().extent();
    let et = truth.aabb().extent();
    let mut sum = 0.0;
    for axis in 0..3 {
        let t = et[axis].to_f64_lossy();
        if !(t > 0.0) {
            return Err(Error::InvalidMesh(format!("truth extent is zero along axis {axis}")));
        }
        sum += (ep[axis].to_f64_lossy() - t).abs() / t;
    }
    Ok(sum / 3.0 * 100.0)
}

/// Intersection over union of axis-aligned boxes.
pub fn box_iou<T: Real>(a: &Aabb<T>, b: &Aabb<T>) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.volume().to_f64_lossy());
    let union = a.volume().to_f64_lossy() + b.volume().to_f64_lossy() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn support_iou<T: Real>(predicted: &TriMesh<T>, truth: &TriMesh<T>) -> Result<f64> {
    non_empty(predicted)?;
    non_empty(truth)?;
    Ok(box_iou(&predicted.aabb(), &truth.aabb()))
}

/// Generalized winding number of a closed mesh about `p` (1 inside, 0 outside).
pub fn winding_number<T: Real>(mesh: &TriMesh<T>, p: &Vector3<T>) -> f64 {
    let total: f64 = (0..mesh.face_count())
        .map(|f| solid_angle(p, &mesh.triangle(f)).to_f64_lossy())
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Fraction of points inside the closed mesh or within `margin_mm` of its surface.
pub fn target_inclusion_rate<T: Real>(points: &[Vector3<T>], mesh: &TriMesh<T>, margin_mm: f64) -> Result<f64> {
    if !(margin_mm >= 0.0) {
        return Err(Error::InvalidConfig("margin must be non-negative".into()));
    }
    non_empty(mesh)?;
    if points.is_empty() {
        return Ok(0.0);
    }
    let bvh = TriangleBvh::build(mesh);
    let margin = margin_mm / MM_PER_CM;
    let hits = points
        .iter()
        .filter(|p| {
            let near = bvh
                .closest_point(p)
                .is_some_and(|c| c.distance_squared.to_f64_lossy().sqrt() <= margin);
            near || winding_number(mesh, p) > 0.5
        })
        .count();
    Ok(hits as f64 / points.len() as f64)
}

/// Metrics of one predicted organ against its truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEval {
    pub case: String,
    pub organ: String,
    pub method: String,
    pub centroid_mm: f64,
    pub per_axis_mm: [f64; 3],
    pub scale_error_pct: f64,
    pub iou: f64,
}

impl CaseEval {
    pub fn measure<T: Real>(
        case: &str,
        organ: &str,
        method: &str,
        predicted: &TriMesh<T>,
        truth: &TriMesh<T>,
    ) -> Result<Self> {
        let c = centroid_error(predicted, truth)?;
        Ok(Self {
            case: case.into(),
            organ: organ.into(),
            method: method.into(),
            centroid_mm: c.euclidean_mm,
            per_axis_mm: c.per_axis_mm,
            scale_error_pct: scale_error(predicted, truth)?,
            iou: support_iou(predicted, truth)?,
        })
    }
}

/// Means over cases for one (organ, method) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub organ: String,
    pub method: String,
    pub cases: usize,
    pub centroid_mm: f64,
    pub per_axis_mm: [f64; 3],
    pub scale_error_pct: f64,
    pub iou: f64,
}

fn summarize<'a>(organ: &str, method: &str, rows: impl Iterator<Item = &'a CaseEval>) -> Option<EvalSummary> {
    let rows: Vec<_> = rows.collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&CaseEval) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(EvalSummary {
        organ: organ.into(),
        method: method.into(),
        cases: rows.len(),
        centroid_mm: mean(&|r| r.centroid_mm),
        per_axis_mm: [
            mean(&|r| r.per_axis_mm[0]),
            mean(&|r| r.per_axis_mm[1]),
            mean(&|r| r.per_axis_mm[2]),
        ],
        scale_error_pct: mean(&|r| r.scale_error_pct),
        iou: mean(&|r| r.iou),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: String,
    pub seed: u64,
    /// Per (organ, method), then the all-organ mean per method (organ `"all"`).
    pub summaries: Vec<EvalSummary>,
    pub cases: Vec<CaseEval>,
}

impl EvalReport {
    pub fn new(seed: u64, mut cases: Vec<CaseEval>) -> Self {
        cases.sort_by(|a, b| (&a.organ, &a.method, &a.case).cmp(&(&b.organ, &b.method, &b.case)));
        let mut keys: Vec<(String, String)> = cases.iter().map(|c| (c.organ.clone(), c.method.clone())).collect();
        keys.dedup();
        let mut methods: Vec<String> = cases.iter().map(|c| c.method.clone()).collect();
        methods.sort();
        methods.dedup();
        let mut summaries: Vec<_> = keys
            .iter()
            .filter_map(|(o, m)| summarize(o, m, cases.iter().filter(|c| &c.organ == o && &c.method == m)))
            .collect();
        summaries.extend(
            methods
                .iter()
                .filter_map(|m| summarize("all", m, cases.iter().filter(|c| &c.method == m))),
        );
        Self {
            format_version: format_version(),
            seed,
            summaries,
            cases,
        }
    }

    pub fn summary(&self, organ: &str, method: &str) -> Option<&EvalSummary> {
        self.summaries.iter().find(|s| s.organ == organ && s.method == method)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// One row per summary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "organ,method,cases,centroid_mm,err_x_mm,err_y_mm,err_z_mm,scale_error_pct,support_iou\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4}\n",
                s.organ,
                s.method,
                s.cases,
                s.centroid_mm,
                s.per_axis_mm[0],
                s.per_axis_mm[1],
                s.per_axis_mm[2],
                s.scale_error_pct,
                s.iou
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn three_four_five() {
        let a = shapes::unit_cube::<f64>();
        let b = a.translated(&Vector3::new(0.3, 0.4, 0.0));
        let e = centroid_error(&b, &a).unwrap();
        assert!((e.euclidean_mm - 5.0).abs() < 1e-9);
        assert!((e.per_axis_mm[0] - 3.0).abs() < 1e-9 && (e.per_axis_mm[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn offset_cubes_iou() {
        let a = shapes::unit_cube::<f64>();
        let b = a.translated(&Vector3::new(0.5, 0.0, 0.0));
        assert!((support_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let far = a.translated(&Vector3::new(3.0, 0.0, 0.0));
        assert_eq!(support_iou(&a, &far).unwrap(), 0.0);
    }

    #[test]
    fn mixed_scale_error() {
        let a = shapes::unit_cube::<f64>();
        let b = a.map_vertices(|v| v.component_mul(&Vector3::new(1.1, 0.9, 1.0)));
        assert!((scale_error(&b, &a).unwrap() - 20.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn inclusion_margin() {
        let s = shapes::icosphere::<f64>(3);
        let inside = [Vector3::zeros()];
        assert_eq!(target_inclusion_rate(&inside, &s, 0.0).unwrap(), 1.0);
        let pt = [Vector3::new(0.0, 0.0, 1.9)];
        assert_eq!(target_inclusion_rate(&pt, &s, 10.0).unwrap(), 1.0);
        assert_eq!(target_inclusion_rate(&pt, &s, 5.0).unwrap(), 0.0);
        assert!((winding_number(&s, &Vector3::zeros()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_groups() {
        let a = shapes::unit_cube::<f64>();
        let rows = vec![
            CaseEval::measure("c1", "liver", "prior", &a, &a).unwrap(),
            CaseEval::measure("c0", "liver", "prior", &a.translated(&Vector3::x()), &a).unwrap(),
        ];
        let r = EvalReport::new(0, rows);
        let s = r.summary("liver", "prior").unwrap();
        assert_eq!(s.cases, 2);
        assert!((s.centroid_mm - 5.0).abs() < 1e-9);
        assert!(r.summary("all", "prior").is_some());
        assert_eq!(r.to_csv().lines().count(), 3);
    }
}
