use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the numeric core is generic over.
///
/// The pipeline default is `f64` (gradient checks and report reproducibility
/// are specified at 64-bit precision); `f32` is supported for experiments.
pub trait Scalar:
    Float
    + num_traits::NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` (exact for `f64` targets).
    fn cast(v: f64) -> Self;
    /// Widening view as `f64` (exact for `f32` and `f64`).
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
