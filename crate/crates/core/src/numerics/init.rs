use super::{CounterRng, Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// `U(−1/√fan_in, +1/√fan_in)`
    FanInUniform {
        fan_in: usize,
    },
}

impl Init {
    /// Fan-in uniform with the row count as fan-in (weights used as `x·W`).
    pub fn fan_in_rows(rows: usize) -> Self {
        Init::FanInUniform { fan_in: rows }
    }
}

/// Deterministic parameter initialisation. Values are drawn in `f64` and
/// rounded, so `f32` and `f64` instances start from the same point.
pub fn seeded_init<T: Scalar>(rows: usize, cols: usize, scheme: Init, seed: u64) -> Result<Matrix<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape("seeded_init", (rows, cols), (rows.max(1), cols.max(1))));
    }
    match scheme {
        Init::Zeros => Ok(Matrix::zeros(rows, cols)),
        Init::FanInUniform { fan_in } => {
            if fan_in == 0 {
                return Err(Error::Config("fan_in must be positive".into()));
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = CounterRng::new(seed);
            let data = (0..rows * cols).map(|_| T::of(rng.uniform(-bound, bound))).collect();
            Matrix::from_vec(rows, cols, data)
        }
    }
}
