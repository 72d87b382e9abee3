//! Semantic context loss, pixel cross-entropy and the weighted objective.

use crate::error::{Error, Result};
use crate::numerics::{row_dots, sigmoid_scalar, Matrix, Scalar};

/// Label value excluded from every loss and metric.
pub const IGNORE_INDEX: u8 = 255;

/// Clamp applied to presence scores inside the logarithms.
pub const SC_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the semantic context term.
    pub lambda: f64,
    /// Weight of the auxiliary segmentation term.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.2,
            alpha: 0.4,
        }
    }
}

pub fn total_loss(ce: f64, aux: f64, sc: f64, w: &LossWeights) -> f64 {
    w.lambda * sc + w.alpha * aux + ce
}

/// `v_i = sigmoid(s_i · c_i)` as a `1 × M` vector.
pub fn presence_scores<T: Scalar>(s_o: &Matrix<T>, centroids: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(row_dots(s_o, centroids)?.map(sigmoid_scalar))
}

#[derive(Clone, Debug)]
pub struct ScLoss<T> {
    pub loss: T,
    /// Presence scores `v`, `1 × M`.
    pub v: Matrix<T>,
    /// Gradient of the loss w.r.t. the pre-sigmoid scores `s_i · c_i`.
    pub d_logits: Matrix<T>,
}

fn check_presence<T: Scalar>(y: &[T], m: usize) -> Result<()> {
    if y.len() != m {
        return Err(Error::shape("sc_loss", (1, m), (1, y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Contract(format!("presence entry {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Binary cross-entropy of presence scores against `y`, averaged over the
/// classes flagged in `active`.
pub fn sc_loss_from_scores<T: Scalar>(v: &Matrix<T>, y: &[T], active: &[bool]) -> Result<ScLoss<T>> {
    let m = v.cols();
    check_presence(y, m)?;
    if active.len() != m {
        return Err(Error::shape("sc_loss active mask", (1, m), (1, active.len())));
    }
    let count = active.iter().filter(|&&a| a).count();
    let mut d_logits = Matrix::zeros(1, m);
    if count == 0 {
        return Ok(ScLoss {
            loss: T::zero(),
            v: v.clone(),
            d_logits,
        });
    }
    let (lo, hi) = (T::of(SC_CLAMP), T::one() - T::of(SC_CLAMP));
    let inv = T::one() / T::of(count as f64);
    let mut total = T::zero();
    for i in (0..m).filter(|&i| active[i]) {
        let vi = v.as_slice()[i];
        let vc = vi.max(lo).min(hi);
        total -= y[i] * vc.ln() + (T::one() - y[i]) * (T::one() - vc).ln();
        if vi > lo && vi < hi {
            d_logits.as_mut_slice()[i] = (vi - y[i]) * inv;
        }
    }
    Ok(ScLoss {
        loss: total * inv,
        v: v.clone(),
        d_logits,
    })
}

pub fn sc_loss<T: Scalar>(s_o: &Matrix<T>, centroids: &Matrix<T>, y: &[T]) -> Result<ScLoss<T>> {
    let active = vec![true; s_o.rows()];
    sc_loss_masked(s_o, centroids, y, &active)
}

pub fn sc_loss_masked<T: Scalar>(
    s_o: &Matrix<T>,
    centroids: &Matrix<T>,
    y: &[T],
    active: &[bool],
) -> Result<ScLoss<T>> {
    let v = presence_scores(s_o, centroids)?;
    sc_loss_from_scores(&v, y, active)
}

/// Chains gradients w.r.t. the presence logits back to `(d_s_o, d_centroids)`.
pub fn presence_backward<T: Scalar>(
    s_o: &Matrix<T>,
    centroids: &Matrix<T>,
    d_logits: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    s_o.same_shape(centroids, "presence_backward")?;
    d_logits.expect_shape("presence_backward", 1, s_o.rows())?;
    let mut d_s = Matrix::zeros(s_o.rows(), s_o.cols());
    let mut d_c = Matrix::zeros(s_o.rows(), s_o.cols());
    for (i, &g) in d_logits.as_slice().iter().enumerate() {
        for (o, &c) in d_s.row_mut(i).iter_mut().zip(centroids.row(i)) {
            *o = g * c;
        }
        for (o, &s) in d_c.row_mut(i).iter_mut().zip(s_o.row(i)) {
            *o = g * s;
        }
    }
    Ok((d_s, d_c))
}

#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: T,
    /// Gradient w.r.t. the logits (zero rows for ignored pixels).
    pub d_logits: Matrix<T>,
    /// Number of non-ignored pixels.
    pub count: usize,
}

/// Mean over non-ignored pixels of `−log softmax(logits)[label]`.
pub fn pixel_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[u8], ignore_index: u8) -> Result<CrossEntropy<T>> {
    let (l, m) = logits.shape();
    if labels.len() != l {
        return Err(Error::shape("pixel_cross_entropy", (l, m), (labels.len(), 1)));
    }
    let mut d_logits = Matrix::zeros(l, m);
    let mut total = T::zero();
    let mut count = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label == ignore_index {
            continue;
        }
        let label = label as usize;
        if label >= m {
            return Err(Error::Data(format!("label {label} at pixel {i} is outside [0, {m})")));
        }
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z: T = row.iter().map(|&x| (x - max).exp()).sum();
        total += z.ln() + max - row[label];
        let d = d_logits.row_mut(i);
        for (o, &x) in d.iter_mut().zip(row) {
            *o = (x - max).exp() / z;
        }
        d[label] -= T::one();
        count += 1;
    }
    if count == 0 {
        log::warn!("pixel_cross_entropy: every pixel is ignored");
        return Ok(CrossEntropy {
            loss: T::zero(),
            d_logits,
            count,
        });
    }
    let inv = T::one() / T::of(count as f64);
    d_logits.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
    Ok(CrossEntropy {
        loss: total * inv,
        d_logits,
        count,
    })
}
