//! Element types for tensors.

use core::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Floating-point element type. Training defaults to `f32`; the gradient
/// checking suite instantiates the same code paths with `f64`.
pub trait Scalar: Float + NumAssign + Debug + Display + Default + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "float32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "float64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}
