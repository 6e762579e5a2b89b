//! Scalar trait shared by every numeric container in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// All sampling happens in `f64` and is converted through [`Real::lit`], so a
/// given seed produces the same draws (up to rounding) for either width.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Widens to `f64` for reporting.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `base`, widened to a few ulps near 1 when the type is too coarse for it.
    #[inline]
    fn tolerance(base: f64) -> f64 {
        base.max(64.0 * Self::epsilon().to_f64_lossy())
    }
}

impl Real for f32 {}
impl Real for f64 {}
