//! Floating-point abstraction shared by the numeric kernels.
//!
//! Network evaluation, optimisation and speed-field integration are written
//! against [`Scalar`] so they run in either `f32` or `f64`. Physical
//! measurements coming off the simulator stay `f64` and are converted at the
//! boundary with [`Scalar::of`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Width tag written into serialized parameter files.
    const WIDTH: u8;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;
}
