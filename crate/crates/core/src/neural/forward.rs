use rand::RngCore;

use super::layers::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, dense_forward, dropout_mask, leaky_relu, sigmoid,
};
use super::model::Model;
use super::tensor::{matmul_nt, matmul_tn, Matrix, Real};
use super::NeuralError;

/// Train mode uses batch statistics and draws dropout masks from the given
/// generator; infer mode uses running statistics and no dropout.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Infer,
}

#[derive(Debug, Clone)]
pub struct HiddenCache<T> {
    input: Matrix<T>,
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    normalized: Matrix<T>,
    dropout: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct OutputCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    normalized: Matrix<T>,
    mask: Matrix<T>,
}

/// Intermediates of a forward pass. Only a train-mode cache taken at the
/// model's current step can be differentiated.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    step: Option<u64>,
    hidden: Vec<HiddenCache<T>>,
    output: Option<OutputCache<T>>,
}

impl<T> Cache<T> {
    pub fn is_train(&self) -> bool {
        self.step.is_some()
    }

    /// Batch means and variances of every batch-norm layer, hidden layers first.
    pub fn batch_statistics(&self) -> Vec<(&[T], &[T])> {
        let mut out: Vec<(&[T], &[T])> = self.hidden.iter().map(|h| (&h.mean[..], &h.var[..])).collect();
        if let Some(o) = &self.output {
            out.push((&o.mean, &o.var));
        }
        out
    }
}

/// Parameter gradients in [`Model::parameters`] order, plus the gradient
/// with respect to each block's input (`block_inputs[i]` for hidden layer
/// `i`, the last entry for the output block).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub block_inputs: Vec<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

pub fn forward<T: Real>(model: &Model<T>, inputs: &Matrix<T>, mode: Mode<'_>) -> Result<(Matrix<T>, Cache<T>), NeuralError> {
    let topo = &model.topology;
    if inputs.cols != topo.input_dim || inputs.rows == 0 {
        return Err(NeuralError::ShapeMismatch(format!(
            "input is {}x{}, network expects B x {} with B ≥ 1",
            inputs.rows, inputs.cols, topo.input_dim
        )));
    }
    let eps = T::cast(topo.bn_epsilon);
    let slope = T::cast(topo.leaky_slope);

    match mode {
        Mode::Infer => {
            let mut x = inputs.clone();
            for (layer, &skip) in model.hidden.iter().zip(&topo.residual) {
                let z = dense_forward(&x, &layer.dense);
                let mut y = leaky_relu(&batch_norm_infer(&z, &layer.bn, eps), slope);
                if skip {
                    add_assign(&mut y, &x);
                }
                x = y;
            }
            let h = batch_norm_infer(&x, &model.output.bn, eps);
            let mask = sigmoid_matrix(dense_forward(&h, &model.output.dense));
            let cache = Cache {
                step: None,
                hidden: Vec::new(),
                output: None,
            };
            Ok((mask, cache))
        }
        Mode::Train(rng) => {
            let mut x = inputs.clone();
            let mut hidden = Vec::with_capacity(model.hidden.len());
            for (layer, &skip) in model.hidden.iter().zip(&topo.residual) {
                let z = dense_forward(&x, &layer.dense);
                let bn = batch_norm_train(&z, &layer.bn, eps);
                let mut y = leaky_relu(&bn.out, slope);
                let dropout = (topo.dropout_rate > 0.0).then(|| {
                    let m = dropout_mask::<T>(y.rows, y.cols, topo.dropout_rate, rng);
                    for (v, &s) in y.data.iter_mut().zip(&m.data) {
                        *v = *v * s;
                    }
                    m
                });
                if skip {
                    add_assign(&mut y, &x);
                }
                hidden.push(HiddenCache {
                    input: std::mem::replace(&mut x, y),
                    xhat: bn.xhat,
                    inv_std: bn.inv_std,
                    mean: bn.mean,
                    var: bn.var,
                    normalized: bn.out,
                    dropout,
                });
            }
            let bn = batch_norm_train(&x, &model.output.bn, eps);
            let mask = sigmoid_matrix(dense_forward(&bn.out, &model.output.dense));
            let cache = Cache {
                step: Some(model.step),
                hidden,
                output: Some(OutputCache {
                    xhat: bn.xhat,
                    inv_std: bn.inv_std,
                    mean: bn.mean,
                    var: bn.var,
                    normalized: bn.out,
                    mask: mask.clone(),
                }),
            };
            Ok((mask, cache))
        }
    }
}

fn add_assign<T: Real>(y: &mut Matrix<T>, x: &Matrix<T>) {
    for (a, &b) in y.data.iter_mut().zip(&x.data) {
        *a = *a + b;
    }
}

fn sigmoid_matrix<T: Real>(mut z: Matrix<T>) -> Matrix<T> {
    for v in z.data.iter_mut() {
        *v = sigmoid(*v);
    }
    z
}

/// Reverse-mode gradients of a scalar loss whose gradient with respect to
/// the mask is `grad_mask`.
pub fn backward<T: Real>(model: &Model<T>, cache: &Cache<T>, grad_mask: &Matrix<T>) -> Result<Gradients<T>, NeuralError> {
    let out_cache = match (cache.step, &cache.output) {
        (Some(step), Some(o)) if step == model.step && cache.hidden.len() == model.hidden.len() => o,
        _ => return Err(NeuralError::StaleCache),
    };
    if grad_mask.rows != out_cache.mask.rows || grad_mask.cols != out_cache.mask.cols {
        return Err(NeuralError::ShapeMismatch(format!(
            "mask gradient is {}x{}, mask is {}x{}",
            grad_mask.rows, grad_mask.cols, out_cache.mask.rows, out_cache.mask.cols
        )));
    }
    let slope = T::cast(model.topology.leaky_slope);
    let n_hidden = model.hidden.len();
    let mut params: Vec<Vec<T>> = vec![Vec::new(); 4 * n_hidden + 4];
    let mut block_inputs = vec![Matrix::zeros(0, 0); n_hidden + 1];

    // output block: sigmoid, FC, batch norm
    let dlogit = Matrix::from_vec(
        grad_mask.rows,
        grad_mask.cols,
        grad_mask
            .data
            .iter()
            .zip(&out_cache.mask.data)
            .map(|(&g, &m)| g * m * (T::one() - m))
            .collect(),
    );
    let dw = matmul_tn(&out_cache.normalized, &dlogit);
    let dh = matmul_nt(&dlogit, &model.output.dense.weight);
    let (mut dx, dgamma, dbeta) =
        batch_norm_backward(&dh, &out_cache.xhat, &out_cache.inv_std, &model.output.bn.gamma);
    let base = 4 * n_hidden;
    params[base] = dgamma;
    params[base + 1] = dbeta;
    params[base + 2] = dw.data;
    params[base + 3] = dlogit.sum_rows();
    block_inputs[n_hidden] = dx.clone();

    for i in (0..n_hidden).rev() {
        let layer = &model.hidden[i];
        let hc = &cache.hidden[i];
        let dy = dx;
        // back through dropout and leaky ReLU to the batch-norm output
        let mut dn = dy.clone();
        if let Some(mask) = &hc.dropout {
            for (g, &s) in dn.data.iter_mut().zip(&mask.data) {
                *g = *g * s;
            }
        }
        for (g, &v) in dn.data.iter_mut().zip(&hc.normalized.data) {
            if v <= T::zero() {
                *g = *g * slope;
            }
        }
        let (dz, dgamma, dbeta) = batch_norm_backward(&dn, &hc.xhat, &hc.inv_std, &layer.bn.gamma);
        params[4 * i] = matmul_tn(&hc.input, &dz).data;
        params[4 * i + 1] = dz.sum_rows();
        params[4 * i + 2] = dgamma;
        params[4 * i + 3] = dbeta;
        let mut dinput = matmul_nt(&dz, &layer.dense.weight);
        if model.topology.residual[i] {
            add_assign(&mut dinput, &dy);
        }
        block_inputs[i] = dinput.clone();
        dx = dinput;
    }
    Ok(Gradients { params, block_inputs })
}

impl<T: Real> Model<T> {
    /// Folds a train-mode pass's batch statistics into the running statistics:
    /// `running ← momentum·running + (1 - momentum)·batch`.
    pub fn update_running_stats(&mut self, cache: &Cache<T>) -> Result<(), NeuralError> {
        if !cache.is_train() || cache.hidden.len() != self.hidden.len() {
            return Err(NeuralError::StaleCache);
        }
        let m = T::cast(self.topology.bn_momentum);
        let one_minus = T::one() - m;
        let stats = cache.batch_statistics();
        let bns = self
            .hidden
            .iter_mut()
            .map(|l| &mut l.bn)
            .chain(std::iter::once(&mut self.output.bn));
        for (bn, (mean, var)) in bns.zip(stats) {
            for (r, &b) in bn.running_mean.iter_mut().zip(mean) {
                *r = m * *r + one_minus * b;
            }
            for (r, &b) in bn.running_var.iter_mut().zip(var) {
                *r = m * *r + one_minus * b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn mask_is_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f64>::init(Topology::new(20, vec![16, 16], 7), 3).unwrap();
        let x = random_matrix(&mut rng, 9, 20);
        let (mask, _) = forward(&model, &x, Mode::Infer).unwrap();
        assert!(mask.data.iter().all(|&m| m > 0.0 && m < 1.0));
        let (mask, _) = forward(&model, &x, Mode::Train(&mut rng)).unwrap();
        assert!(mask.data.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn infer_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::<f32>::init(Topology::new(12, vec![8], 4), 3).unwrap();
        let x = Matrix::<f32>::from_f64(5, 12, &(0..60).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let (a, _) = forward(&model, &x, Mode::Infer).unwrap();
        let (b, _) = forward(&model, &x, Mode::Infer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_layer_reduction_matches_hand_rolled_composition() {
        // 3 examples, 4 inputs, one hidden layer of 4, 2 outputs; BN identity, no dropout
        let topo = Topology::new(4, vec![4], 2).with_dropout(0.0);
        let mut model = Model::<f64>::init(topo, 11).unwrap();
        let x = Matrix::from_vec(3, 4, vec![0.5, -1.0, 2.0, 0.0, 1.5, 0.25, -0.75, 1.0, -2.0, 0.5, 0.5, -0.5]);
        model.hidden[0].dense.bias = vec![0.1, -0.2, 0.3, 0.0];
        model.output.dense.bias = vec![0.05, -0.05];

        let w1 = &model.hidden[0].dense.weight;
        let w2 = &model.output.dense.weight;
        let mut expected = vec![0.0; 6];
        for r in 0..3 {
            let mut h = [0.0; 4];
            for j in 0..4 {
                let mut z = model.hidden[0].dense.bias[j];
                for i in 0..4 {
                    z += x.get(r, i) * w1.get(i, j);
                }
                h[j] = if z > 0.0 { z } else { 0.01 * z };
            }
            for o in 0..2 {
                let mut z = model.output.dense.bias[o];
                for j in 0..4 {
                    z += h[j] * w2.get(j, o);
                }
                expected[r * 2 + o] = 1.0 / (1.0 + (-z).exp());
            }
        }
        // eps = 0 makes running-stat batch norm an exact identity
        model.topology.bn_epsilon = f64::MIN_POSITIVE;
        let (mask, _) = forward(&model, &x, Mode::Infer).unwrap();
        for (a, b) in mask.data.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_cache_errors() {
        let model = Model::<f64>::init(Topology::new(6, vec![4], 3), 1).unwrap();
        let bad = Matrix::zeros(2, 5);
        assert!(matches!(forward(&model, &bad, Mode::Infer), Err(NeuralError::ShapeMismatch(_))));

        let x = Matrix::zeros(2, 6);
        let (_, infer_cache) = forward(&model, &x, Mode::Infer).unwrap();
        let g = Matrix::zeros(2, 3);
        assert!(matches!(backward(&model, &infer_cache, &g), Err(NeuralError::StaleCache)));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = forward(&model, &x, Mode::Train(&mut rng)).unwrap();
        let mut advanced = model.clone();
        advanced.step += 1;
        assert!(matches!(backward(&advanced, &cache, &g), Err(NeuralError::StaleCache)));
        assert!(matches!(
            backward(&model, &cache, &Matrix::zeros(3, 3)),
            Err(NeuralError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_mask_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let topo = Topology::new(10, vec![8, 8], 5).with_residual(vec![false, true]);
        let model = Model::<f64>::init(topo, 2).unwrap();
        let x = random_matrix(&mut rng, 4, 10);
        let (_, cache) = forward(&model, &x, Mode::Train(&mut rng)).unwrap();
        let g = backward(&model, &cache, &Matrix::zeros(4, 5)).unwrap();
        assert!(g.params.iter().flatten().all(|&v| v == 0.0));
        for (p, q) in g.params.iter().zip(model.parameters()) {
            assert_eq!(p.len(), q.len());
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = Model::<f64>::init(Topology::new(3, vec![2], 2), 2).unwrap();
        let x = random_matrix(&mut rng, 8, 3);
        let (_, cache) = forward(&model, &x, Mode::Train(&mut rng)).unwrap();
        let (mean, var) = {
            let s = cache.batch_statistics();
            (s[0].0.to_vec(), s[0].1.to_vec())
        };
        model.update_running_stats(&cache).unwrap();
        for c in 0..2 {
            assert!((model.hidden[0].bn.running_mean[c] - 0.01 * mean[c]).abs() < 1e-15);
            assert!((model.hidden[0].bn.running_var[c] - (0.99 + 0.01 * var[c])).abs() < 1e-15);
        }
    }
}
