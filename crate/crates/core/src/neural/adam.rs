use super::forward::Gradients;
use super::model::Model;
use super::tensor::Real;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 5e-4 with the usual Adam moment constants.
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Model<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = model.parameters().iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update; increments `model.step`.
    ///
    /// Nothing is modified when any gradient entry is non-finite.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<(), NeuralError> {
        if !grads.is_finite() {
            return Err(NeuralError::NonFiniteGradient);
        }
        let shapes_match = grads.params.len() == self.m.len()
            && grads.params.iter().zip(&self.m).all(|(g, m)| g.len() == m.len());
        if !shapes_match {
            return Err(NeuralError::ShapeMismatch("gradients do not match optimizer state".into()));
        }
        model.step += 1;
        let t = model.step as i32;
        let c = self.config;
        let (b1, b2) = (T::cast(c.beta1), T::cast(c.beta2));
        let (one_b1, one_b2) = (T::cast(1.0 - c.beta1), T::cast(1.0 - c.beta2));
        let bc1 = T::cast(1.0 - c.beta1.powi(t));
        let bc2 = T::cast(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::cast(c.lr), T::cast(c.eps));

        for (((param, grad), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(&grads.params)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
