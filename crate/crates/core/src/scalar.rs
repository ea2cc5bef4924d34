use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar used throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; infallible for the primitive floats.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("primitive float conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("primitive float conversion")
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Floor applied inside logarithms of predicted probabilities.
pub fn log_floor<T: Scalar>() -> T {
    T::of(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(0.25).as_f64(), 0.25);
        assert_eq!(f32::of(0.5).as_f64(), 0.5);
        assert_eq!(f64::of_usize(7), 7.0);
    }
}
