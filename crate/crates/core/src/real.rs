use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type of the tensor engine. `f32` is the training default, `f64` is
/// used for gradient checking.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64` (rounding for `f32`).
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// `e^self` from `libm`. `Float::exp` switches to the platform routine
    /// when some other crate enables `num-traits/std`, which would make
    /// results depend on how the crate was built.
    fn exp_libm(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::expf(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::exp(self)
    }
}
