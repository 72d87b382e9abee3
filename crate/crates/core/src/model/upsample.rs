//! Bilinear resampling, half-pixel (align-corners = false) convention.
//!
//! For an output coordinate `d` along an axis of source length `s` and
//! destination length `t`: `src = max(0, (d + 0.5)·s/t − 0.5)`,
//! `i0 = floor(src)`, `i1 = min(i0 + 1, s − 1)`, `λ = src − i0`, and the
//! sample is `(1 − λ)·v[i0] + λ·v[i1]`. Rows and columns are blended
//! separably.

use crate::error::{Error, Result};
use crate::model::conv::Spatial;
use crate::numerics::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisTap {
    pub i0: usize,
    pub i1: usize,
    pub lambda: f64,
}

pub fn axis_taps(src: usize, dst: usize) -> Vec<AxisTap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            AxisTap {
                i0,
                i1,
                lambda: s - i0 as f64,
            }
        })
        .collect()
}

fn check(from: Spatial, to: Spatial) -> Result<()> {
    if to.height == 0 || to.width == 0 || from.height == 0 || from.width == 0 {
        return Err(Error::Config(format!(
            "cannot resample {}x{} to {}x{}",
            from.height, from.width, to.height, to.width
        )));
    }
    Ok(())
}

/// Resamples a `(h·w) × c` map to `(H·W) × c`.
pub fn bilinear_resize<T: Scalar>(map: &Matrix<T>, from: Spatial, to: Spatial) -> Result<Matrix<T>> {
    check(from, to)?;
    if map.rows() != from.len() {
        return Err(Error::shape("bilinear_resize", map.shape(), (from.len(), map.cols())));
    }
    let (ty, tx) = (axis_taps(from.height, to.height), axis_taps(from.width, to.width));
    let c = map.cols();
    let mut out = Matrix::zeros(to.len(), c);
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            let dst = out.row_mut(y * to.width + x);
            for (yi, wy) in [(ry.i0, 1.0 - ry.lambda), (ry.i1, ry.lambda)] {
                for (xi, wx) in [(rx.i0, 1.0 - rx.lambda), (rx.i1, rx.lambda)] {
                    let w = T::of(wy * wx);
                    if w == T::zero() {
                        continue;
                    }
                    for (d, &s) in dst.iter_mut().zip(map.row(yi * from.width + xi)) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Upsampling variant; the target must be at least as large as the source.
pub fn bilinear_upsample<T: Scalar>(map: &Matrix<T>, from: Spatial, to: Spatial) -> Result<Matrix<T>> {
    if to.height < from.height || to.width < from.width {
        return Err(Error::Config(format!(
            "upsample target {}x{} is smaller than source {}x{}",
            to.height, to.width, from.height, from.width
        )));
    }
    bilinear_resize(map, from, to)
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward<T: Scalar>(d_out: &Matrix<T>, from: Spatial, to: Spatial) -> Result<Matrix<T>> {
    check(from, to)?;
    if d_out.rows() != to.len() {
        return Err(Error::shape(
            "bilinear_resize_backward",
            d_out.shape(),
            (to.len(), d_out.cols()),
        ));
    }
    let (ty, tx) = (axis_taps(from.height, to.height), axis_taps(from.width, to.width));
    let mut d_map = Matrix::zeros(from.len(), d_out.cols());
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            let g = d_out.row(y * to.width + x);
            for (yi, wy) in [(ry.i0, 1.0 - ry.lambda), (ry.i1, ry.lambda)] {
                for (xi, wx) in [(rx.i0, 1.0 - rx.lambda), (rx.i1, rx.lambda)] {
                    let w = T::of(wy * wx);
                    if w == T::zero() {
                        continue;
                    }
                    for (d, &gv) in d_map.row_mut(yi * from.width + xi).iter_mut().zip(g) {
                        *d += w * gv;
                    }
                }
            }
        }
    }
    Ok(d_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{frobenius_dot, random_matrix};
    use crate::numerics::CounterRng;

    #[test]
    fn same_size_is_identity() {
        let m = random_matrix(12, 2, -1.0, 1.0, &mut CounterRng::new(1));
        let d = Spatial::new(3, 4);
        assert_eq!(bilinear_upsample(&m, d, d).unwrap(), m);
    }

    #[test]
    fn constant_stays_constant() {
        let m = Matrix::<f64>::filled(4, 3, 0.7);
        let out = bilinear_upsample(&m, Spatial::new(2, 2), Spatial::new(8, 8)).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn two_to_four_coordinate_formula() {
        // source [[a, b], [c, d]]
        let (a, b, c, d) = (1.0, 2.0, 3.0, 5.0);
        let m: Matrix<f64> = Matrix::from_rows(&[[a], [b], [c], [d]]);
        let out = bilinear_upsample(&m, Spatial::new(2, 2), Spatial::new(4, 4)).unwrap();
        // src(dst) = max(0, (dst + 0.5)/2 − 0.5): 0, 0.25, 0.75, 1 (clamped at the top by i1)
        let coord = |t: usize| -> (usize, usize, f64) {
            let s = ((t as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(1), s - i0 as f64)
        };
        let src = [[a, b], [c, d]];
        for y in 0..4 {
            for x in 0..4 {
                let (y0, y1, ly) = coord(y);
                let (x0, x1, lx) = coord(x);
                let top = src[y0][x0] * (1.0 - lx) + src[y0][x1] * lx;
                let bot = src[y1][x0] * (1.0 - lx) + src[y1][x1] * lx;
                let e = top * (1.0 - ly) + bot * ly;
                assert!((out[(y * 4 + x, 0)] - e).abs() < 1e-15);
            }
        }
        assert_eq!(out[(0, 0)], a);
        assert_eq!(out[(15, 0)], d);
        assert!((out[(1, 0)] - (a * 0.75 + b * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = CounterRng::new(3);
        let (from, to) = (Spatial::new(3, 5), Spatial::new(12, 20));
        let x = random_matrix(15, 2, -1.0, 1.0, &mut rng);
        let y = random_matrix(240, 2, -1.0, 1.0, &mut rng);
        let lhs = frobenius_dot(&bilinear_upsample(&x, from, to).unwrap(), &y);
        let rhs = frobenius_dot(&x, &bilinear_resize_backward(&y, from, to).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let m = Matrix::<f32>::zeros(4, 1);
        assert!(matches!(
            bilinear_upsample(&m, Spatial::new(2, 2), Spatial::new(0, 4)),
            Err(Error::Config(_))
        ));
    }
}
