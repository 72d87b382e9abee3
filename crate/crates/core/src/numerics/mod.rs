//! Dense kernels with hand-derived vector-Jacobian products, the seeded
//! generator every component draws from, and the finite-difference oracle.

pub mod gradcheck;
pub mod init;
pub mod kernels;
mod matrix;
pub mod rng;

pub use gradcheck::{grad_check, Differentiable, GradCheckOptions, GradCheckReport};
pub use init::{seeded_init, Init};
pub use kernels::*;
pub use matrix::Matrix;
pub use rng::CounterRng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
