//! Central finite-difference check of [`backward`] on small networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{backward, forward, Mode};
use super::model::{Model, Topology};
use super::tensor::Matrix;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub batch: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            batch: 4,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

/// One analytic/numeric disagreement.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// entries whose difference exceeds the absolute floor.
    pub max_rel_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// 10 → 8 → 8 → 5 with a skip around the second hidden layer and dropout off.
pub fn tiny_topology() -> Topology {
    Topology::new(10, vec![8, 8], 5)
        .with_residual(vec![false, true])
        .with_dropout(0.0)
}

/// Scalar test loss `½ Σ (mask - target)²` in train mode.
fn loss(model: &Model<f64>, x: &Matrix<f64>, target: &Matrix<f64>) -> Result<f64, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mask, _) = forward(model, x, Mode::Train(&mut rng))?;
    Ok(mask.data.iter().zip(&target.data).map(|(m, t)| 0.5 * (m - t) * (m - t)).sum())
}

/// Compares every parameter gradient (and the input gradient) of a randomly
/// initialized model against central differences.
pub fn check_topology(topology: Topology, seed: u64, config: GradcheckConfig) -> Result<GradcheckReport, NeuralError> {
    if topology.dropout_rate != 0.0 {
        return Err(NeuralError::InvalidTopology("gradient check needs dropout off".into()));
    }
    let mut model = Model::<f64>::init(topology, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // move batch norm away from the identity so its parameters matter
    for p in model.parameters_mut() {
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let (b, din, dout) = (config.batch, model.topology.input_dim, model.topology.output_dim);
    let x = Matrix::from_vec(b, din, (0..b * din).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let target = Matrix::from_vec(b, dout, (0..b * dout).map(|_| rng.gen_range(0.0..1.0)).collect());

    let (mask, cache) = forward(&model, &x, Mode::Train(&mut rng))?;
    let grad_mask = Matrix::from_vec(b, dout, mask.data.iter().zip(&target.data).map(|(m, t)| m - t).collect());
    let grads = backward(&model, &cache, &grad_mask)?;

    let mut report = GradcheckReport {
        checked: 0,
        max_rel_error: 0.0,
        mismatches: Vec::new(),
    };
    let mut record = |name: &str, index: usize, analytic: f64, numeric: f64| {
        report.checked += 1;
        // entries whose gradient is below the floor on both sides are counted but not compared
        let scale = analytic.abs().max(numeric.abs());
        if scale <= config.abs_floor {
            return;
        }
        let rel = (analytic - numeric).abs() / scale;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > config.rel_tol {
            report.mismatches.push(Mismatch {
                parameter: name.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    };

    let h = config.step;
    let names = model.parameter_names();
    for (p, name) in names.iter().enumerate() {
        for i in 0..grads.params[p].len() {
            let original = model.parameters()[p][i];
            model.parameters_mut()[p][i] = original + h;
            let up = loss(&model, &x, &target)?;
            model.parameters_mut()[p][i] = original - h;
            let down = loss(&model, &x, &target)?;
            model.parameters_mut()[p][i] = original;
            record(name, i, grads.params[p][i], (up - down) / (2.0 * h));
        }
    }
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        xp.data[i] = x.data[i] + h;
        let up = loss(&model, &xp, &target)?;
        xp.data[i] = x.data[i] - h;
        let down = loss(&model, &xp, &target)?;
        xp.data[i] = x.data[i];
        record("input", i, grads.block_inputs[0].data[i], (up - down) / (2.0 * h));
    }
    Ok(report)
}

/// The default suite: the tiny topology plus a skip-free and a deeper variant.
pub fn run_suite(seed: u64) -> Result<Vec<(String, GradcheckReport)>, NeuralError> {
    let cases = [
        ("10-8-8-5 skip", tiny_topology()),
        ("10-8-8-5 plain", tiny_topology().with_residual(vec![false, false])),
        (
            "6-7-7-7-3 skips",
            Topology::new(6, vec![7, 7, 7], 3)
                .with_residual(vec![false, true, true])
                .with_dropout(0.0),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, topo)| Ok((name.to_string(), check_topology(topo, seed, GradcheckConfig::default())?)))
        .collect()
}
