//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar (`f32` or `f64`).
///
/// Tolerances in this crate are stated for 64-bit arithmetic; [`Real::tol`]
/// widens them to what the concrete type can actually resolve.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }

    /// `max(x, 64·machine epsilon)`.
    fn tol(x: f64) -> Self {
        let floor = Self::epsilon() * Self::c(64.0);
        Self::c(x).max(floor)
    }
}

impl Real for f32 {}
impl Real for f64 {}
