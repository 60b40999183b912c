//! Per-layer building blocks shared by the forward and backward passes.

use rand::RngCore;

use super::model::{BatchNorm, Dense};
use super::tensor::{matmul, Matrix, Real};

/// `x·W + b`.
pub fn dense_forward<T: Real>(x: &Matrix<T>, layer: &Dense<T>) -> Matrix<T> {
    let mut z = matmul(x, &layer.weight);
    for r in 0..z.rows {
        for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v = *v + b;
        }
    }
    z
}

/// Train-mode batch norm output together with what backward needs.
#[derive(Debug, Clone)]
pub struct BatchNormTrain<T> {
    pub out: Matrix<T>,
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) batch variance.
    pub var: Vec<T>,
}

pub fn batch_norm_train<T: Real>(x: &Matrix<T>, bn: &BatchNorm<T>, eps: T) -> BatchNormTrain<T> {
    let b = T::cast(x.rows as f64);
    let mean: Vec<T> = x.sum_rows().into_iter().map(|s| s / b).collect();
    let mut var = vec![T::zero(); x.cols];
    for r in 0..x.rows {
        for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = xv - m;
            *v = *v + d * d;
        }
    }
    for v in var.iter_mut() {
        *v = *v / b;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut out = Matrix::zeros(x.rows, x.cols);
    for (i, &xv) in x.data.iter().enumerate() {
        let c = i % x.cols;
        let h = (xv - mean[c]) * inv_std[c];
        xhat.data[i] = h;
        out.data[i] = bn.gamma[c] * h + bn.beta[c];
    }
    BatchNormTrain {
        out,
        xhat,
        inv_std,
        mean,
        var,
    }
}

/// Inference batch norm with running statistics.
pub fn batch_norm_infer<T: Real>(x: &Matrix<T>, bn: &BatchNorm<T>, eps: T) -> Matrix<T> {
    let scale: Vec<T> = bn
        .gamma
        .iter()
        .zip(&bn.running_var)
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let mut out = x.clone();
    for r in 0..out.rows {
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (*o - bn.running_mean[c]) * scale[c] + bn.beta[c];
        }
    }
    out
}

/// Gradients of train-mode batch norm: `(dx, dγ, dβ)`.
pub fn batch_norm_backward<T: Real>(
    dy: &Matrix<T>,
    xhat: &Matrix<T>,
    inv_std: &[T],
    gamma: &[T],
) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let cols = dy.cols;
    let b = T::cast(dy.rows as f64);
    let mut dgamma = vec![T::zero(); cols];
    let mut dbeta = vec![T::zero(); cols];
    for r in 0..dy.rows {
        for ((c, &g), &h) in dy.row(r).iter().enumerate().zip(xhat.row(r)) {
            dgamma[c] = dgamma[c] + g * h;
            dbeta[c] = dbeta[c] + g;
        }
    }
    // with dxhat = dy·γ: Σ dxhat = γ·dβ and Σ dxhat·xhat = γ·dγ
    let mut dx = Matrix::zeros(dy.rows, cols);
    for r in 0..dy.rows {
        let (dyr, hr) = (dy.row(r), xhat.row(r));
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            let dxhat = dyr[c] * gamma[c];
            *o = inv_std[c] / b * (b * dxhat - gamma[c] * dbeta[c] - hr[c] * gamma[c] * dgamma[c]);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn leaky_relu<T: Real>(x: &Matrix<T>, slope: T) -> Matrix<T> {
    let data = x.data.iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
    Matrix::from_vec(x.rows, x.cols, data)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverted-dropout scale matrix: each entry is `1/(1-rate)` with
/// probability `1 - rate`, else zero.
pub fn dropout_mask<T: Real>(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Matrix<T> {
    let keep = 1.0 - rate;
    let threshold = (keep * 4_294_967_296.0) as u64;
    let scale = T::cast(1.0 / keep);
    let data = (0..rows * cols)
        .map(|_| if (rng.next_u32() as u64) < threshold { scale } else { T::zero() })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_norm_train_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::<f64>::from_vec(16, 6, (0..96).map(|_| rng.gen_range(-3.0..5.0)).collect());
        let mut bn = BatchNorm::new(6);
        bn.gamma = vec![0.5, 1.0, 2.0, 1.5, 0.1, 3.0];
        bn.beta = vec![-1.0, 0.0, 1.0, 2.0, 0.3, -0.5];
        let y = batch_norm_train(&x, &bn, 1e-12).out;
        for c in 0..6 {
            let col: Vec<f64> = (0..16).map(|r| y.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!((mean - bn.beta[c]).abs() < 1e-6);
            assert!((var - bn.gamma[c].powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_running_stats_pass_through() {
        let x = Matrix::<f64>::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let y = batch_norm_infer(&x, &BatchNorm::new(3), 0.0);
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_is_reproducible_and_unbiased() {
        let a: Matrix<f64> = dropout_mask(100, 1000, 0.2, &mut ChaCha8Rng::seed_from_u64(4));
        let b: Matrix<f64> = dropout_mask(100, 1000, 0.2, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        let mean = a.data.iter().sum::<f64>() / a.data.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(a.data.iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn leaky_and_sigmoid() {
        let x = Matrix::<f64>::from_vec(1, 3, vec![-2.0, 0.0, 3.0]);
        assert_eq!(leaky_relu(&x, 0.01).data, vec![-0.02, 0.0, 3.0]);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-30.0f64) > 0.0 && sigmoid(30.0f64) < 1.0);
    }
}
