//! Scalar abstraction over the two floating-point widths the stack runs at.
//!
//! `f32` is the production width for training and streaming. `f64` exists so
//! gradient-check oracles can compare against central finite differences with
//! enough mantissa to be meaningful. Transcendentals come from `num-traits`
//! backed by `libm`, so results are identical with and without `std`.

use core::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the tensor stack is generic over.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Mantissa width marker, used only in diagnostics.
    const BITS: u32;
}

impl Real for f32 {
    const BITS: u32 = 32;
}

impl Real for f64 {
    const BITS: u32 = 64;
}

/// Lift an `f64` constant into the active scalar type.
#[inline(always)]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}
