//! Scalar abstraction for the numeric core.
//!
//! Everything numerical (tensors, tapes, models, trainers) is generic over
//! [`Scalar`] so the same code runs in `f32` or `f64`. The pipeline defaults
//! to `f64` (see the aliases at the crate root), which is what the gradient
//! tolerances in the test suite assume.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, the common currency for constants, RNG draws and
    /// checkpoint storage.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
