//! Scalar abstraction shared by every geometric routine.
//!
//! The numeric core is written once against [`Real`] and instantiated for
//! `f32` and `f64`. Wire formats and the pipeline use `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable by the geometry, registration and prior code.
///
/// Only [`RealField`] contributes methods (`sqrt`, `abs`, `max`, ...); the
/// `num-traits` bounds are conversions, so method calls never become
/// ambiguous between the two trait families.
pub trait Real:
    RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon of the concrete type.
    const EPS: Self;

    /// Converts an `f64` literal, rounding for narrower types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;
}
