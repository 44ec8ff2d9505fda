//! Scalar abstraction for the numeric core.
//!
//! Everything downstream of the bit level (ranges, moments, solvers,
//! quadrature) is generic over [`Scalar`], so the same code runs at `f32`
//! and `f64`. Concrete `f64` aliases live at the crate root.

use std::fmt::{Debug, Display};

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Widening conversion to `f64`; exact for both supported types.
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + LinalgScalar
        + Debug
        + Display
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// Shorthand for converting an `f64` value into the working scalar type.
/// Exact for `f64`, rounded for `f32`.
#[inline]
pub fn s<T: Scalar>(x: f64) -> T {
    <T as FromPrimitive>::from_f64(x).expect("finite f64 converts to any Scalar")
}
