//! Dense matrices, seeded sampling and the Adam update rule.

mod adam;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use rng::{Rng, RowStreams};

use core::fmt::Debug;
use num_traits::Float;

/// Floating-point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
