use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point type the model math is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits needed for an exact text round trip.
    const ROUND_TRIP_DIGITS: usize;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Scientific notation with enough digits to parse back bit-exactly.
    fn to_exact_string(self) -> String {
        format!("{:.*e}", Self::ROUND_TRIP_DIGITS - 1, self)
    }
}

impl Scalar for f32 {
    const ROUND_TRIP_DIGITS: usize = 9;
}

impl Scalar for f64 {
    const ROUND_TRIP_DIGITS: usize = 17;
}
