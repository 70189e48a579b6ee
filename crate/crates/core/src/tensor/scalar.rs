use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Element type for [`crate::tensor::Tensor`].
///
/// The network stores parameters and activations in `f32`; the gradient
/// checker re-runs everything in `f64` through the same generic code paths.
pub trait Scalar:
    Float
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64s(self) -> f64;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64s(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64s(self) -> f64 {
        self
    }
}
