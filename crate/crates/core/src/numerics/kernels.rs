//! Forward kernels and their vector-Jacobian products.
//!
//! Backward functions take the upstream gradient `d_out` of the forward
//! output and return gradients for each input in argument order.

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// `C = A·B`
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Matrix::zeros(m, n);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let cd = c.as_mut_slice();
    for i in 0..m {
        let crow = &mut cd[i * n..(i + 1) * n];
        for t in 0..k {
            let av = ad[i * k + t];
            if av == T::zero() {
                continue;
            }
            let brow = &bd[t * n..(t + 1) * n];
            for (c, &b) in crow.iter_mut().zip(brow) {
                *c += av * b;
            }
        }
    }
    Ok(c)
}

/// `C = Aᵀ·B`
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Matrix::zeros(m, n);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let cd = c.as_mut_slice();
    for t in 0..k {
        let brow = &bd[t * n..(t + 1) * n];
        for i in 0..m {
            let av = ad[t * m + i];
            if av == T::zero() {
                continue;
            }
            for (c, &b) in cd[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *c += av * b;
            }
        }
    }
    Ok(c)
}

/// `C = A·Bᵀ`
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut s = T::zero();
            for t in 0..k {
                s += arow[t] * brow[t];
            }
            c[(i, j)] = s;
        }
    }
    Ok(c)
}

/// Gradients of `C = A·B`: `(dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, d_out: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    d_out.expect_shape("matmul_backward", a.rows(), b.cols())?;
    Ok((matmul_nt(d_out, b)?, matmul_tn(a, d_out)?))
}

/// Softmax over each row, with the row maximum subtracted first.
pub fn row_softmax<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

/// Given softmax output `y`: `dx = y ⊙ (dy − ⟨dy, y⟩_row)`.
pub fn row_softmax_backward<T: Scalar>(y: &Matrix<T>, d_out: &Matrix<T>) -> Result<Matrix<T>> {
    y.same_shape(d_out, "row_softmax_backward")?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let (yr, dr) = (y.row(i), d_out.row(i));
        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for (o, (&yv, &dv)) in dx.row_mut(i).iter_mut().zip(yr.iter().zip(dr)) {
            *o = yv * (dv - dot);
        }
    }
    Ok(dx)
}

pub fn relu<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Gradient of relu given its pre-activation input.
pub fn relu_backward<T: Scalar>(pre: &Matrix<T>, d_out: &Matrix<T>) -> Result<Matrix<T>> {
    pre.zip_map(d_out, "relu_backward", |x, d| if x > T::zero() { d } else { T::zero() })
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(sigmoid_scalar)
}

/// Gradient of sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Matrix<T>, d_out: &Matrix<T>) -> Result<Matrix<T>> {
    y.zip_map(d_out, "sigmoid_backward", |y, d| d * y * (T::one() - y))
}

/// Adds a `1 × cols` bias to every row.
pub fn add_row_bias<T: Scalar>(m: &Matrix<T>, bias: &Matrix<T>) -> Result<Matrix<T>> {
    bias.expect_shape("add_row_bias", 1, m.cols())?;
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (x, &b) in out.row_mut(i).iter_mut().zip(bias.as_slice()) {
            *x += b;
        }
    }
    Ok(out)
}

/// `diag(scale)·m` with `scale` a `1 × rows` vector.
pub fn scale_rows<T: Scalar>(m: &Matrix<T>, scale: &Matrix<T>) -> Result<Matrix<T>> {
    scale.expect_shape("scale_rows", 1, m.rows())?;
    let mut out = m.clone();
    for (i, &s) in scale.as_slice().iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    Ok(out)
}

/// Gradients of `diag(scale)·m`: `(d_m, d_scale)`.
pub fn scale_rows_backward<T: Scalar>(
    m: &Matrix<T>,
    scale: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    m.same_shape(d_out, "scale_rows_backward")?;
    let d_m = scale_rows(d_out, scale)?;
    Ok((d_m, row_dots(m, d_out)?))
}

/// Per-row dot products `⟨a_i, b_i⟩` as a `1 × rows` vector.
pub fn row_dots<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    a.same_shape(b, "row_dots")?;
    let dots = (0..a.rows())
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(&x, &y)| x * y).sum())
        .collect();
    Ok(Matrix::row_vector(dots))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for t in 0..a.cols() {
                    c[(i, j)] += a[(i, t)] * b[(t, j)];
                }
            }
        }
        c
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = crate::numerics::CounterRng::new(seed);
        let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let b = random(3, 2, 1);
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
        let z = Matrix::<f64>::zeros(2, 2);
        assert_eq!(matmul(&z, &random(2, 2, 2)).unwrap(), z);
    }

    #[test]
    fn matmul_worked_example() {
        let a: Matrix<f64> = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b: Matrix<f64> = Matrix::from_rows(&[[5.0], [6.0]]);
        let expect = naive_matmul(&a, &b);
        assert_eq!(expect.as_slice(), &[17.0, 39.0]);
        assert_eq!(matmul(&a, &b).unwrap(), expect);
    }

    #[test]
    fn transposed_variants_agree_with_naive() {
        let a = random(4, 3, 3);
        let b = random(4, 5, 4);
        let c = random(5, 3, 5);
        let tn = matmul_tn(&a, &b).unwrap();
        let nt = matmul_nt(&a, &c).unwrap();
        let e1 = naive_matmul(&a.transpose(), &b);
        let e2 = naive_matmul(&a, &c.transpose());
        assert!(tn.sub(&e1).unwrap().max_abs() < 1e-12);
        assert!(nt.sub(&e2).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&random(2, 3, 1), &random(2, 3, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let m: Matrix<f64> = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        let s = row_softmax(&m);
        for j in 0..3 {
            assert!((s[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        // direct exp/sum
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for j in 0..3 {
            assert!((s[(1, j)] - expect[j]).abs() < 1e-12);
        }
        for (got, want) in s.row(1).iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a: Matrix<f64> = Matrix::from_rows(&[[0.0, 0.7]]);
        let b: Matrix<f64> = Matrix::from_rows(&[[40.0, 40.7]]);
        let (sa, sb) = (row_softmax(&a), row_softmax(&b));
        assert!(sa.sub(&sb).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn activations() {
        let m: Matrix<f64> = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&m).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid_scalar(-800.0f64) >= 0.0 && sigmoid_scalar(800.0f64) <= 1.0);
    }

    #[test]
    fn scale_rows_zero_is_zero() {
        let m = random(3, 2, 9);
        let s = Matrix::zeros(1, 3);
        assert_eq!(scale_rows(&m, &s).unwrap().max_abs(), 0.0);
    }
}
