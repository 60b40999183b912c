use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Matrix, Real};
use super::NeuralError;

/// Shape and hyperparameters of the masking network.
///
/// Each hidden layer is FC → batch norm → leaky ReLU → dropout, optionally
/// wrapped in an identity skip (`out = block(x) + x`). The output block is
/// batch norm → FC → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub residual: Vec<bool>,
    pub output_dim: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for Topology {
    /// 645 → 1024 → 512 → 512 → 512 → 256 → 129, with skips around the two
    /// 512 → 512 layers.
    fn default() -> Self {
        Self {
            input_dim: 645,
            hidden: vec![1024, 512, 512, 512, 256],
            residual: vec![false, false, true, true, false],
            output_dim: 129,
            leaky_slope: 0.01,
            dropout_rate: 0.2,
            bn_epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }
}

impl Topology {
    /// A network with the default activation/BN/dropout settings and no skips.
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        let residual = vec![false; hidden.len()];
        Self {
            input_dim,
            hidden,
            residual,
            output_dim,
            ..Self::default()
        }
    }

    pub fn with_residual(mut self, residual: Vec<bool>) -> Self {
        self.residual = residual;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    /// Input width of hidden layer `i` (or of the output block for `i == hidden.len()`).
    pub fn layer_input(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else {
            self.hidden[i - 1]
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |msg: String| Err(NeuralError::InvalidTopology(msg));
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.residual.len() != self.hidden.len() {
            return bad(format!(
                "{} residual flags for {} hidden layers",
                self.residual.len(),
                self.hidden.len()
            ));
        }
        for (i, (&width, &skip)) in self.hidden.iter().zip(&self.residual).enumerate() {
            if skip && self.layer_input(i) != width {
                return bad(format!(
                    "hidden layer {} maps {} → {width}; a skip needs equal widths",
                    i + 1,
                    self.layer_input(i)
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch norm epsilon must be positive and momentum in [0, 1]".into());
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky slope must be nonnegative".into());
        }
        Ok(())
    }
}

/// Fully-connected layer, `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![T::one(); width],
            beta: vec![T::zero(); width],
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub dense: Dense<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer<T> {
    pub bn: BatchNorm<T>,
    pub dense: Dense<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub topology: Topology,
    pub hidden: Vec<HiddenLayer<T>>,
    pub output: OutputLayer<T>,
    /// Optimizer steps taken.
    pub step: u64,
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::cast(rng.gen_range(-limit..limit))).collect();
    Dense {
        weight: Matrix::from_vec(fan_in, fan_out, data),
        bias: vec![T::zero(); fan_out],
    }
}

impl<T: Real> Model<T> {
    /// Glorot-uniform weights, zero biases, identity batch norm; fully
    /// determined by `seed`.
    pub fn init(topology: Topology, seed: u64) -> Result<Self, NeuralError> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = (0..topology.hidden.len())
            .map(|i| {
                let width = topology.hidden[i];
                HiddenLayer {
                    dense: glorot(&mut rng, topology.layer_input(i), width),
                    bn: BatchNorm::new(width),
                }
            })
            .collect();
        let last = topology.layer_input(topology.hidden.len());
        let output = OutputLayer {
            bn: BatchNorm::new(last),
            dense: glorot(&mut rng, last, topology.output_dim),
        };
        Ok(Self {
            topology,
            hidden,
            output,
            step: 0,
        })
    }

    /// Trainable tensors in canonical order: per hidden layer `W, b, γ, β`,
    /// then the output block's `γ, β, W, b`.
    pub fn parameters(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(4 * self.hidden.len() + 4);
        for layer in &self.hidden {
            out.push(&layer.dense.weight.data);
            out.push(&layer.dense.bias);
            out.push(&layer.bn.gamma);
            out.push(&layer.bn.beta);
        }
        out.push(&self.output.bn.gamma);
        out.push(&self.output.bn.beta);
        out.push(&self.output.dense.weight.data);
        out.push(&self.output.dense.bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(4 * self.hidden.len() + 4);
        for layer in &mut self.hidden {
            out.push(&mut layer.dense.weight.data);
            out.push(&mut layer.dense.bias);
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta);
        }
        out.push(&mut self.output.bn.gamma);
        out.push(&mut self.output.bn.beta);
        out.push(&mut self.output.dense.weight.data);
        out.push(&mut self.output.dense.bias);
        out
    }

    /// Names matching [`Model::parameters`], for diagnostics.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.hidden.len() {
            for p in ["weight", "bias", "bn.gamma", "bn.beta"] {
                out.push(format!("hidden{}.{p}", i + 1));
            }
        }
        for p in ["bn.gamma", "bn.beta", "weight", "bias"] {
            out.push(format!("output.{p}"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm<T>> {
        let mut out: Vec<&BatchNorm<T>> = self.hidden.iter().map(|l| &l.bn).collect();
        out.push(&self.output.bn);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.iter().all(|x| x.is_finite()))
            && self
                .batch_norms()
                .iter()
                .all(|bn| bn.running_mean.iter().chain(&bn.running_var).all(|x| x.is_finite()))
    }
}
