//! Label volumes: a raw little-endian voxel array plus a JSON sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{check_format_version, format_version};

/// Integer label volume with its voxel-index → world (millimeter) affine.
///
/// Labels are stored x-fastest: `index = i + nx * (j + ny * k)`. The affine
/// follows the column convention of medical imaging headers:
/// `world_mm = A · [i, j, k, 1]ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelLabelGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub affine: Matrix4<f64>,
    pub labels: Vec<u32>,
    pub label_names: BTreeMap<u32, String>,
}

impl VoxelLabelGrid {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], affine: Matrix4<f64>, labels: Vec<u32>) -> Result<Self> {
        let g = Self {
            dims,
            spacing_mm,
            affine,
            labels,
            label_names: BTreeMap::new(),
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid with a diagonal affine built from the spacing (origin at voxel 0).
    pub fn with_spacing(dims: [usize; 3], spacing_mm: [f64; 3], labels: Vec<u32>) -> Result<Self> {
        let mut affine = Matrix4::identity();
        for a in 0..3 {
            affine[(a, a)] = spacing_mm[a];
        }
        Self::new(dims, spacing_mm, affine, labels)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dims.iter().product::<usize>();
        if self.labels.len() != n {
            return Err(Error::InvalidVolume(format!(
                "label array has {} voxels, dims {:?} need {n}",
                self.labels.len(),
                self.dims
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing_mm
            )));
        }
        let det = self.affine.fixed_view::<3, 3>(0, 0).determinant();
        if !(det.abs() > 1e-12) || !self.affine.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidVolume("affine is not invertible".into()));
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u32 {
        self.labels[self.index(i, j, k)]
    }

    /// World position in centimeters of a (possibly fractional) voxel index.
    pub fn voxel_to_world_cm(&self, ijk: &Vector3<f64>) -> Vector3<f64> {
        let w = self.affine * Vector4::new(ijk.x, ijk.y, ijk.z, 1.0);
        Vector3::new(w.x, w.y, w.z) / 10.0
    }

    pub fn label_id(&self, name: &str) -> Option<u32> {
        self.label_names
            .iter()
            .find_map(|(id, n)| (n == name).then_some(*id))
    }

    pub fn sidecar(&self, dtype: VoxelType) -> VolumeHeader {
        VolumeHeader {
            format_version: format_version(),
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            affine: std::array::from_fn(|r| std::array::from_fn(|c| self.affine[(r, c)])),
            label_names: self
                .label_names
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            dtype,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelType {
    Uint8,
    #[default]
    Uint16,
    Int16,
    Uint32,
    Int32,
}

impl VoxelType {
    fn width(self) -> usize {
        match self {
            VoxelType::Uint8 => 1,
            VoxelType::Uint16 | VoxelType::Int16 => 2,
            VoxelType::Uint32 | VoxelType::Int32 => 4,
        }
    }
}

/// JSON sidecar describing a raw label volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format_version: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Row-major 4×4, voxel index → world millimeters.
    pub affine: [[f64; 4]; 4],
    #[serde(default)]
    pub label_names: BTreeMap<String, String>,
    #[serde(default)]
    pub dtype: VoxelType,
}

/// Raw file path for a sidecar `foo.json` is `foo.raw`.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn decode_labels(bytes: &[u8], dtype: VoxelType) -> Result<Vec<u32>> {
    let w = dtype.width();
    if bytes.len() % w != 0 {
        return Err(Error::InvalidVolume(format!(
            "raw size {} is not a multiple of {w}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(w)
        .map(|c| {
            let v: i64 = match dtype {
                VoxelType::Uint8 => c[0] as i64,
                VoxelType::Uint16 => u16::from_le_bytes([c[0], c[1]]) as i64,
                VoxelType::Int16 => i16::from_le_bytes([c[0], c[1]]) as i64,
                VoxelType::Uint32 => u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64,
                VoxelType::Int32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64,
            };
            u32::try_from(v).map_err(|_| Error::InvalidVolume(format!("negative label {v}")))
        })
        .collect()
}

pub fn encode_labels(labels: &[u32], dtype: VoxelType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.len() * dtype.width());
    for &l in labels {
        let overflow = || Error::InvalidVolume(format!("label {l} does not fit {dtype:?}"));
        match dtype {
            VoxelType::Uint8 => out.push(u8::try_from(l).map_err(|_| overflow())?),
            VoxelType::Uint16 => out.extend(u16::try_from(l).map_err(|_| overflow())?.to_le_bytes()),
            VoxelType::Int16 => out.extend(i16::try_from(l).map_err(|_| overflow())?.to_le_bytes()),
            VoxelType::Uint32 => out.extend(l.to_le_bytes()),
            VoxelType::Int32 => out.extend(i32::try_from(l).map_err(|_| overflow())?.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Reads `header_path` (JSON) and the sibling `.raw` file.
pub fn read_volume(header_path: &Path) -> Result<VoxelLabelGrid> {
    let header: VolumeHeader = crate::format::read_json(header_path)?;
    check_format_version(&header.format_version)?;
    let bytes = std::fs::read(raw_path_for(header_path))?;
    let labels = decode_labels(&bytes, header.dtype)?;
    let affine = Matrix4::from_fn(|r, c| header.affine[r][c]);
    let mut grid = VoxelLabelGrid::new(header.dims, header.spacing_mm, affine, labels)?;
    for (k, v) in header.label_names {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::InvalidVolume(format!("label key `{k}` is not an integer")))?;
        grid.label_names.insert(id, v);
    }
    Ok(grid)
}

pub fn write_volume(header_path: &Path, grid: &VoxelLabelGrid, dtype: VoxelType) -> Result<()> {
    grid.validate()?;
    crate::format::write_json(header_path, &grid.sidecar(dtype))?;
    std::fs::write(raw_path_for(header_path), encode_labels(&grid.labels, dtype)?)?;
    Ok(())
}
