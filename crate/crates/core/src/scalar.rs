//! Floating-point scalar abstraction shared by the numerical kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by softmax, scoring, calibration, and aggregation.
///
/// Implemented for `f32` and `f64`. The experiment pipeline runs in `f64`;
/// `f32` is available for memory-bound scoring of large logit files.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Copy + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossless-or-rounding conversion from `f64`.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    /// Conversion to `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar converts to f64")
    }

    fn of_usize(value: usize) -> Self {
        Self::of(value as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
