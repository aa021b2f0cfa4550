//! Scalar abstraction for the numeric core.
//!
//! Every distance, value table, and solver in this crate is generic over a
//! floating-point scalar so the same code runs in `f32` or `f64`. Concrete
//! `f64` aliases for the main types live at the crate root; pick those unless
//! you have a reason not to (the certification tolerances in the toolkit
//! defaults assume `f64` precision).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
///
/// The bound set is deliberately small: `Float` gives the arithmetic and
/// comparisons, `FromPrimitive`/`ToPrimitive` the config-value conversions,
/// `NumAssign` the compound-assignment operators the hot loops want, and
/// `Sum` lets iterator pipelines fold without manual accumulators.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant (tolerance, config default) into `Self`.
    ///
    /// Conversions of ordinary config magnitudes cannot fail for the `f32` /
    /// `f64` implementations, so this keeps call sites free of `unwrap`
    /// noise.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant must convert into the scalar type")
    }

    /// Lossy view of the value as `f64`, for reporting and serialization
    /// boundaries that are pinned to `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
