use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, Signed, ToPrimitive};

/// Floating-point scalar used by the simulators, the LP solver and the fits.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Signed + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance used for pivoting and degeneracy tests.
    #[inline]
    fn tolerance() -> Self {
        Self::epsilon().powf(Self::lit(2.0 / 3.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}
