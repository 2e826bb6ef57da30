//! Shared pieces of the JSON document formats: the format-version field and
//! row-major matrix encodings.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Version written into every emitted JSON document.
pub const FORMAT_VERSION: &str = "1.0";
pub const FORMAT_MAJOR: u32 = 1;

pub fn format_version() -> String {
    FORMAT_VERSION.to_string()
}

/// Accepts any `1.x` version string, rejects other majors.
pub fn check_format_version(found: &str) -> Result<()> {
    let major = found
        .split('.')
        .next()
        .and_then(|m| m.trim().parse::<u32>().ok());
    match major {
        Some(FORMAT_MAJOR) => Ok(()),
        _ => Err(Error::FormatVersion {
            found: found.to_string(),
            supported: FORMAT_MAJOR,
        }),
    }
}

pub fn mat3_to_rows<T: Real>(m: &Matrix3<T>) -> [[T; 3]; 3] {
    let mut rows = [[T::zero(); 3]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    rows
}

pub fn mat3_from_rows<T: Real>(rows: &[[T; 3]; 3]) -> Matrix3<T> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

pub fn vec3_to_array<T: Real>(v: &Vector3<T>) -> [T; 3] {
    [v.x, v.y, v.z]
}

pub fn dmatrix_to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub fn dmatrix_from_rows<T: Real>(rows: &[Vec<T>], ncols: usize) -> Result<DMatrix<T>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// serde adapter storing a `Matrix3` as nested row-major arrays.
pub mod mat3_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(m: &Matrix3<T>, s: S) -> Result<S::Ok, S::Error> {
        mat3_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Matrix3<T>, D::Error> {
        let rows = <[[T; 3]; 3]>::deserialize(d)?;
        Ok(mat3_from_rows(&rows))
    }
}

/// serde adapter storing a `Vector3` as `[x, y, z]`.
pub mod vec3_array {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(v: &Vector3<T>, s: S) -> Result<S::Ok, S::Error> {
        vec3_to_array(v).serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Vector3<T>, D::Error> {
        let a = <[T; 3]>::deserialize(d)?;
        Ok(Vector3::new(a[0], a[1], a[2]))
    }
}

/// serde adapter for `Vec<Vector3<T>>`.
pub mod vec3_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(v: &[Vector3<T>], s: S) -> Result<S::Ok, S::Error> {
        let arr: Vec<[T; 3]> = v.iter().map(vec3_to_array).collect();
        arr.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<Vector3<T>>, D::Error> {
        let arr = Vec::<[T; 3]>::deserialize(d)?;
        Ok(arr.into_iter().map(|a| Vector3::new(a[0], a[1], a[2])).collect())
    }
}

/// serde adapter storing a `DMatrix` as a list of rows.
pub mod dmatrix_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error> {
        dmatrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<DMatrix<T>, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        dmatrix_from_rows(&rows, ncols).map_err(serde::de::Error::custom)
    }
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<S: Serialize>(path: &std::path::Path, value: &S) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_majors() {
        assert!(check_format_version("1.0").is_ok());
        assert!(check_format_version("1.7").is_ok());
        assert!(matches!(
            check_format_version("2.0"),
            Err(Error::FormatVersion { .. })
        ));
        assert!(check_format_version("garbage").is_err());
    }

    #[test]
    fn rows_are_row_major() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let rows = mat3_to_rows(&m);
        assert_eq!(rows[0], [1.0, 2.0, 3.0]);
        assert_eq!(mat3_from_rows(&rows), m);
    }
}
