//! Scalar abstraction for the floating-point parts of the crate.
//!
//! The simulator itself is integer-stepped and works in integer resource
//! units. Everything that turns those integers into real numbers (objectives,
//! featurization, the scoring network, NSGA-II bookkeeping) is generic over
//! [`Scalar`], which is implemented for `f32` and `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable by the numeric layers: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; the value is always representable
    /// (possibly rounded) for both supported types.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every supported scalar")
    }

    fn of_u64(v: u64) -> Self {
        Self::from_u64(v).expect("u64 converts to every supported scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("supported scalars convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
