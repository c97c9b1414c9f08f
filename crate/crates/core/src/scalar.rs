use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Real scalar used throughout the engine: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    #[doc(hidden)]
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    #[doc(hidden)]
    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[doc(hidden)]
    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    /// Zero-norm guard shared by cosine similarity and normalization.
    #[inline]
    fn norm_eps() -> Self {
        Self::lit(1e-12)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
