use crate::error::{Error, Result};
use crate::model::{is_decayed, GINetParams};
use crate::numerics::{Matrix, Scalar};

/// `base · (1 − iter/total)^power`.
pub fn poly_lr(base: f64, iter: usize, total: usize, power: f64) -> Result<f64> {
    if iter >= total {
        return Err(Error::Schedule { iter, total });
    }
    Ok(base * (1.0 - iter as f64 / total as f64).powf(power))
}

/// One momentum step on a single tensor:
/// `g' = g + wd·θ`, `v ← μ·v + g'`, `θ ← θ − lr·v`.
pub fn sgd_update<T: Scalar>(
    theta: &mut Matrix<T>,
    grad: &Matrix<T>,
    velocity: &mut Matrix<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    theta.same_shape(grad, "sgd_update")?;
    theta.same_shape(velocity, "sgd_update")?;
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    let v = velocity.as_mut_slice();
    for ((t, &g), v) in theta.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(v) {
        let g = g + wd * *t;
        *v = mu * *v + g;
        *t -= lr * *v;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub velocity: GINetParams<T>,
    pub iteration: usize,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &GINetParams<T>) -> Self {
        OptimState {
            velocity: params.zeros_like(),
            iteration: 0,
        }
    }
}

/// Applies [`sgd_update`] to every tensor; biases and interaction gates are
/// not decayed.
pub fn sgd_step<T: Scalar>(
    params: &mut GINetParams<T>,
    grads: &GINetParams<T>,
    state: &mut OptimState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let grads = grads.tensors();
    for (((name, theta), (_, g)), (_, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.velocity.tensors_mut())
    {
        let wd = if is_decayed(name) { weight_decay } else { 0.0 };
        sgd_update(theta, g, v, lr, momentum, wd)?;
    }
    state.iteration += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_examples() {
        assert_eq!(poly_lr(0.001, 0, 100, 0.9).unwrap(), 0.001);
        let half = poly_lr(0.001, 50, 100, 0.9).unwrap();
        assert!((half - 0.001 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((half - 0.000536).abs() < 1e-6);
        let last = poly_lr(0.001, 99_999, 100_000, 0.9).unwrap();
        assert!(last < 1e-7 && last > 0.0);
        assert!(matches!(
            poly_lr(0.1, 10, 10, 0.9),
            Err(Error::Schedule { iter: 10, total: 10 })
        ));
    }

    fn scalar(v: f64) -> Matrix<f64> {
        Matrix::filled(1, 1, v)
    }

    #[test]
    fn zero_lr_updates_velocity_only() {
        let mut t = scalar(2.0);
        let mut v = scalar(0.0);
        sgd_update(&mut t, &scalar(3.0), &mut v, 0.0, 0.9, 0.1).unwrap();
        assert_eq!(t[(0, 0)], 2.0);
        assert_eq!(v[(0, 0)], 3.0 + 0.1 * 2.0);
    }

    #[test]
    fn plain_gradient_descent() {
        let mut t = scalar(1.0);
        let mut v = scalar(0.0);
        sgd_update(&mut t, &scalar(0.5), &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(t[(0, 0)], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn two_step_hand_trace() {
        // θ0 = 1, g = 2θ (loss θ²), μ = 0.9, wd = 0.01, lr = 0.1.
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        let mut t = scalar(1.0);
        let mut v = scalar(0.0);
        let g0 = scalar(2.0 * t[(0, 0)]);
        sgd_update(&mut t, &g0, &mut v, lr, mu, wd).unwrap();
        let v1 = 2.0 + 0.01;
        let t1 = 1.0 - 0.1 * v1;
        assert!((v[(0, 0)] - v1).abs() < 1e-12);
        assert!((t[(0, 0)] - t1).abs() < 1e-12);
        let g1 = scalar(2.0 * t[(0, 0)]);
        sgd_update(&mut t, &g1, &mut v, lr, mu, wd).unwrap();
        let v2 = mu * v1 + 2.0 * t1 + wd * t1;
        let t2 = t1 - lr * v2;
        assert!((v[(0, 0)] - v2).abs() < 1e-12);
        assert!((t[(0, 0)] - t2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut t = Matrix::<f64>::zeros(1, 2);
        let mut v = Matrix::<f64>::zeros(1, 2);
        assert!(sgd_update(&mut t, &scalar(1.0), &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn bundle_step_skips_decay_for_gates_and_biases() {
        use crate::model::GINetConfig;
        let cfg = GINetConfig::default();
        let mut p = GINetParams::<f64>::init(&cfg, 1, None).unwrap();
        let before = p.clone();
        let zero = p.zeros_like();
        let mut st = OptimState::new(&p);
        sgd_step(&mut p, &zero, &mut st, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(st.iteration, 1);
        for ((name, a), (_, b)) in p.tensors().into_iter().zip(before.tensors()) {
            if is_decayed(name) {
                assert!((a[(0, 0)] - 0.95 * b[(0, 0)]).abs() < 1e-12, "{name}");
            } else {
                assert_eq!(a, b, "{name}");
            }
        }
    }
}
