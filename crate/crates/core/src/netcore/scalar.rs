use std::fmt::Debug;
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::Float;

/// Floating-point element type the network can run in.
///
/// Inference and training use `f32`; gradient checks run the same code in
/// `f64`.
pub trait Scalar: Float + LinalgScalar + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
