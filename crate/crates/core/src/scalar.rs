use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used for probabilities and scores.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance used when checking that a distribution sums to one.
    fn mass_tolerance() -> Self;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as float")
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f64 {
    fn mass_tolerance() -> Self {
        1e-9
    }
}

impl Real for f32 {
    // f32 cannot hold 1e-9 around 1.0.
    fn mass_tolerance() -> Self {
        1e-5
    }
}

/// `num / den`, zero when `den` is zero.
pub fn ratio<P: Real>(num: P, den: P) -> P {
    if den == P::zero() {
        P::zero()
    } else {
        num / den
    }
}

/// Round half away from zero for non-negative values, i.e. round-half-up.
pub fn round_half_up(x: f64) -> usize {
    debug_assert!(x >= 0.0);
    (x + 0.5).floor() as usize
}
