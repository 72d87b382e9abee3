//! Central-difference gradient oracle.
//!
//! An operation under test is scalarised (typically `⟨R, op(x)⟩` for a fixed
//! random `R`) and exposes its analytic gradient with respect to every
//! tensor of its input bundle. [`grad_check`] perturbs coordinates one at a
//! time and reports the worst relative error
//! `|a − n| / max(|a|, |n|, 1e−8)`.

use std::fmt;

use super::{CounterRng, Matrix};
use crate::error::{Error, Result};

pub trait Differentiable {
    fn name(&self) -> String;

    /// Labels for the tensors of the input bundle, for reporting.
    fn labels(&self, point: &[Matrix<f64>]) -> Vec<String> {
        (0..point.len()).map(|i| format!("arg{i}")).collect()
    }

    fn forward(&self, point: &[Matrix<f64>]) -> Result<f64>;

    /// Gradient of [`Differentiable::forward`] w.r.t. each tensor of `point`.
    fn backward(&self, point: &[Matrix<f64>]) -> Result<Vec<Matrix<f64>>>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Cap on probed coordinates per tensor; `None` probes all of them.
    pub max_probes_per_tensor: Option<usize>,
    /// Selects which coordinates are probed when capped.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_probes_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst: (usize, usize),
    /// Analytic and central-difference derivative at the worst coordinate.
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max_rel_err={:.3e} worst={}[{},{}] (analytic {:.4e}, numeric {:.4e}) probes={} h={:.0e}",
            self.op,
            self.max_rel_error,
            self.worst_tensor,
            self.worst.0,
            self.worst.1,
            self.analytic,
            self.numeric,
            self.probes,
            self.step
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check(op: &dyn Differentiable, point: &[Matrix<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let name = op.name();
    let labels = op.labels(point);
    let analytic = op.backward(point)?;
    if analytic.len() != point.len() {
        return Err(Error::Contract(format!(
            "{name}: backward returned {} tensors for a bundle of {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.to_vec();
    let mut report = GradCheckReport {
        op: name.clone(),
        max_rel_error: 0.0,
        worst_tensor: labels.first().cloned().unwrap_or_default(),
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        step: opts.step,
        probes: 0,
    };
    let mut picker = CounterRng::derive_label(opts.seed, &name);
    for (t, grad) in analytic.iter().enumerate() {
        point[t].same_shape(grad, "grad_check")?;
        let cols = point[t].cols().max(1);
        let coords: Vec<usize> = match opts.max_probes_per_tensor {
            Some(cap) if cap < point[t].len() => {
                (0..cap).map(|_| picker.below(point[t].len() as u64) as usize).collect()
            }
            _ => (0..point[t].len()).collect(),
        };
        for idx in coords {
            let x0 = point[t].as_slice()[idx];
            let probe_err = || Error::Probe {
                op: name.clone(),
                tensor: labels[t].clone(),
                row: idx / cols,
                col: idx % cols,
            };
            probe[t].as_mut_slice()[idx] = x0 + opts.step;
            let fp = op.forward(&probe)?;
            probe[t].as_mut_slice()[idx] = x0 - opts.step;
            let fm = op.forward(&probe)?;
            probe[t].as_mut_slice()[idx] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(probe_err());
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let err = relative_error(grad.as_slice()[idx], numeric);
            report.probes += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_tensor = labels[t].clone();
                report.worst = (idx / cols, idx % cols);
                report.analytic = grad.as_slice()[idx];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Adapter turning a pair of closures into a [`Differentiable`].
pub struct ClosureOp<F, B> {
    pub name: String,
    pub labels: Vec<String>,
    pub forward: F,
    pub backward: B,
}

impl<F, B> ClosureOp<F, B>
where
    F: Fn(&[Matrix<f64>]) -> Result<f64>,
    B: Fn(&[Matrix<f64>]) -> Result<Vec<Matrix<f64>>>,
{
    pub fn new(name: impl Into<String>, labels: &[&str], forward: F, backward: B) -> Self {
        ClosureOp {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            forward,
            backward,
        }
    }
}

impl<F, B> Differentiable for ClosureOp<F, B>
where
    F: Fn(&[Matrix<f64>]) -> Result<f64>,
    B: Fn(&[Matrix<f64>]) -> Result<Vec<Matrix<f64>>>,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn labels(&self, point: &[Matrix<f64>]) -> Vec<String> {
        if self.labels.len() == point.len() {
            self.labels.clone()
        } else {
            (0..point.len()).map(|i| format!("arg{i}")).collect()
        }
    }

    fn forward(&self, point: &[Matrix<f64>]) -> Result<f64> {
        (self.forward)(point)
    }

    fn backward(&self, point: &[Matrix<f64>]) -> Result<Vec<Matrix<f64>>> {
        (self.backward)(point)
    }
}

/// `⟨a, b⟩` over all entries.
pub fn frobenius_dot(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Matrix with entries uniform in `[lo, hi)`, for probe points and cotangents.
pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut CounterRng) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches")
}
