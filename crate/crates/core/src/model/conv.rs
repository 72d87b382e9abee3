//! 3×3 convolution with zero padding 1, via im2col.
//!
//! Feature maps are `(h·w) × channels` matrices in row-major spatial
//! order. Column layout of the unfolded input is `(ky·3 + kx)·c_in + ci`;
//! the kernel is stored as a `(9·c_in) × c_out` matrix.

use crate::error::{Error, Result};
use crate::numerics::{add_row_bias, matmul, matmul_nt, matmul_tn, relu, relu_backward, Matrix, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn in_channels(&self) -> usize {
        self.weight.rows() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        ConvParams {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Spatial {
    pub height: usize,
    pub width: usize,
}

impl Spatial {
    pub fn new(height: usize, width: usize) -> Self {
        Spatial { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strided(&self, stride: usize) -> Spatial {
        Spatial {
            height: self.height.div_ceil(stride),
            width: self.width.div_ceil(stride),
        }
    }
}

pub fn im2col<T: Scalar>(input: &Matrix<T>, dims: Spatial, stride: usize) -> Result<(Matrix<T>, Spatial)> {
    if input.rows() != dims.len() {
        return Err(Error::shape("im2col", input.shape(), (dims.len(), input.cols())));
    }
    let c = input.cols();
    let out = dims.strided(stride);
    let mut col = Matrix::zeros(out.len(), 9 * c);
    for oy in 0..out.height {
        for ox in 0..out.width {
            let row = col.row_mut(oy * out.width + ox);
            for ky in 0..3 {
                let y = (oy * stride + ky) as isize - 1;
                if y < 0 || y >= dims.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let x = (ox * stride + kx) as isize - 1;
                    if x < 0 || x >= dims.width as isize {
                        continue;
                    }
                    let src = input.row(y as usize * dims.width + x as usize);
                    let k = ky * 3 + kx;
                    row[k * c..(k + 1) * c].copy_from_slice(src);
                }
            }
        }
    }
    Ok((col, out))
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input map.
pub fn col2im<T: Scalar>(d_col: &Matrix<T>, dims: Spatial, channels: usize, stride: usize) -> Matrix<T> {
    let out = dims.strided(stride);
    let mut d_in = Matrix::zeros(dims.len(), channels);
    for oy in 0..out.height {
        for ox in 0..out.width {
            let row = d_col.row(oy * out.width + ox);
            for ky in 0..3 {
                let y = (oy * stride + ky) as isize - 1;
                if y < 0 || y >= dims.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let x = (ox * stride + kx) as isize - 1;
                    if x < 0 || x >= dims.width as isize {
                        continue;
                    }
                    let k = ky * 3 + kx;
                    let dst = d_in.row_mut(y as usize * dims.width + x as usize);
                    for (d, &g) in dst.iter_mut().zip(&row[k * channels..(k + 1) * channels]) {
                        *d += g;
                    }
                }
            }
        }
    }
    d_in
}

/// Intermediates of one conv + relu block.
#[derive(Clone, Debug)]
pub struct ConvTrace<T> {
    pub input_dims: Spatial,
    pub stride: usize,
    pub col: Matrix<T>,
    pub pre: Matrix<T>,
}

/// `relu(conv3x3(input) + bias)`; returns the output map, its dims and the trace.
pub fn conv_relu<T: Scalar>(
    input: &Matrix<T>,
    dims: Spatial,
    p: &ConvParams<T>,
    stride: usize,
) -> Result<(Matrix<T>, Spatial, ConvTrace<T>)> {
    if input.cols() * 9 != p.weight.rows() {
        return Err(Error::shape("conv3x3", input.shape(), p.weight.shape()));
    }
    let (col, out_dims) = im2col(input, dims, stride)?;
    let pre = add_row_bias(&matmul(&col, &p.weight)?, &p.bias)?;
    let out = relu(&pre);
    Ok((
        out,
        out_dims,
        ConvTrace {
            input_dims: dims,
            stride,
            col,
            pre,
        },
    ))
}

/// Gradients of [`conv_relu`]: `(d_input, d_params)`. The input gradient is
/// skipped (returned as `None`) when `need_input` is false.
pub fn conv_relu_backward<T: Scalar>(
    trace: &ConvTrace<T>,
    p: &ConvParams<T>,
    d_out: &Matrix<T>,
    need_input: bool,
) -> Result<(Option<Matrix<T>>, ConvParams<T>)> {
    let d_pre = relu_backward(&trace.pre, d_out)?;
    let grads = ConvParams {
        weight: matmul_tn(&trace.col, &d_pre)?,
        bias: d_pre.col_sums(),
    };
    let d_in = if need_input {
        let d_col = matmul_nt(&d_pre, &p.weight)?;
        Some(col2im(&d_col, trace.input_dims, p.in_channels(), trace.stride))
    } else {
        None
    };
    Ok((d_in, grads))
}
