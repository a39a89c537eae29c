//! Scalar abstraction for the numeric kernels.
//!
//! Synthesis, surrogate induction and the metric computations are written
//! against [`Scalar`] so they run on `f32` or `f64`. The entity layer and the
//! wire formats always carry `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssignOps
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
    /// Tolerance used when checking that a probability vector sums to one.
    const PROB_TOLERANCE: f64;

    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::nan)
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const PROB_TOLERANCE: f64 = 1e-9;
}

impl Scalar for f32 {
    const PROB_TOLERANCE: f64 = 1e-5;
}

/// Sums `values` and reports whether the total is one within tolerance.
pub fn sums_to_one<F: Scalar>(values: impl IntoIterator<Item = F>) -> bool {
    let total: F = values.into_iter().sum();
    (total.f64() - 1.0).abs() <= F::PROB_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(0.25), 0.25);
        assert_eq!(f32::of_usize(7), 7.0f32);
        assert!(sums_to_one([0.2f32, 0.3, 0.5]));
        assert!(!sums_to_one([0.2f64, 0.3]));
    }
}
