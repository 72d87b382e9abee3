//! Graph projection `P = Z·X·W` and residual re-projection `X̃ = Zᵀ·P_o·W_o + X`.
//!
//! `Z` is produced per image: node logits `W_z·Xᵀ` are softmax-normalised
//! over locations, so each visual node is a convex combination of the
//! feature-map cells.

use std::ops::Deref;

use crate::error::Result;
use crate::numerics::{
    matmul, matmul_backward, matmul_nt, matmul_tn, row_softmax, row_softmax_backward, seeded_init, Init, Matrix, Scalar,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams<T> {
    /// `N × C` assignment logits map.
    pub w_z: Matrix<T>,
    /// `C × D` feature-to-node transform.
    pub w: Matrix<T>,
    /// `D × C` node-to-feature transform.
    pub w_o: Matrix<T>,
}

impl<T: Scalar> ProjectionParams<T> {
    pub fn init(nodes: usize, channels: usize, node_dim: usize, seed: impl Fn(&str) -> u64) -> Result<Self> {
        Ok(ProjectionParams {
            w_z: seeded_init(nodes, channels, Init::FanInUniform { fan_in: channels }, seed("w_z"))?,
            w: seeded_init(channels, node_dim, Init::fan_in_rows(channels), seed("w"))?,
            w_o: seeded_init(node_dim, channels, Init::fan_in_rows(node_dim), seed("w_o"))?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionParams {
            w_z: Matrix::zeros(self.w_z.rows(), self.w_z.cols()),
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            w_o: Matrix::zeros(self.w_o.rows(), self.w_o.cols()),
        }
    }

    pub fn nodes(&self) -> usize {
        self.w_z.rows()
    }
}

/// Row-stochastic `N × L` projection matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<T>(Matrix<T>);

impl<T: Scalar> Assignment<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }
}

impl<T> Deref for Assignment<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

pub fn compute_assignment<T: Scalar>(x: &Matrix<T>, w_z: &Matrix<T>) -> Result<Assignment<T>> {
    let logits = matmul_nt(w_z, x)?;
    Ok(Assignment(row_softmax(&logits)))
}

/// Gradients of [`compute_assignment`]: `(d_x, d_w_z)`.
pub fn compute_assignment_backward<T: Scalar>(
    x: &Matrix<T>,
    w_z: &Matrix<T>,
    z: &Matrix<T>,
    d_z: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let d_logits = row_softmax_backward(z, d_z)?;
    // logits = W_z·Xᵀ
    let d_w_z = matmul(&d_logits, x)?;
    let d_x = matmul_tn(&d_logits, w_z)?;
    Ok((d_x, d_w_z))
}

pub fn project<T: Scalar>(x: &Matrix<T>, z: &Matrix<T>, w: &Matrix<T>) -> Result<Matrix<T>> {
    matmul(&matmul(z, x)?, w)
}

/// Gradients of [`project`]: `(d_x, d_z, d_w)`.
pub fn project_backward<T: Scalar>(
    x: &Matrix<T>,
    z: &Matrix<T>,
    w: &Matrix<T>,
    d_p: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let zx = matmul(z, x)?;
    let (d_zx, d_w) = matmul_backward(&zx, w, d_p)?;
    let (d_z, d_x) = matmul_backward(z, x, &d_zx)?;
    Ok((d_x, d_z, d_w))
}

pub fn reproject<T: Scalar>(p_o: &Matrix<T>, z: &Matrix<T>, w_o: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    let r = matmul(p_o, w_o)?;
    let mut out = matmul_tn(z, &r)?;
    out.add_assign(x)?;
    Ok(out)
}

/// Gradients of [`reproject`]: `(d_p_o, d_z, d_w_o, d_x)`.
pub fn reproject_backward<T: Scalar>(
    p_o: &Matrix<T>,
    z: &Matrix<T>,
    w_o: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let r = matmul(p_o, w_o)?;
    // out = Zᵀ·R  ⇒  dZ = R·dOutᵀ, dR = Z·dOut
    let d_z = matmul_nt(&r, d_out)?;
    let d_r = matmul(z, d_out)?;
    let (d_p_o, d_w_o) = matmul_backward(p_o, w_o, &d_r)?;
    Ok((d_p_o, d_z, d_w_o, d_out.clone()))
}
