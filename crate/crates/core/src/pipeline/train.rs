use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, LossWeighting};
use super::stats::FeatureStats;
use super::PipelineError;
use crate::neural::{backward, forward, Adam, AdamConfig, Matrix, Mode, Model, Real, Topology};
use crate::percept::{mse_loss, mse_loss_grad, weighted_loss, weighted_loss_grad};

/// Rows per forward pass when evaluating whole datasets.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Log interval in steps; step 0 and the final step are always logged.
    pub eval_every: u64,
    pub weighting: LossWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 128,
            max_steps: 2000,
            eval_every: 100,
            weighting: LossWeighting::Filter(Default::default()),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.adam.lr > 0.0) || !self.adam.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval interval must be at least 1");
        }
        if let LossWeighting::Filter(w) = &self.weighting {
            w.validate()?;
        }
        Ok(())
    }
}

/// Mean per-frame loss over the full training and validation sets, in
/// inference mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
}

impl<T> TrainOutcome<T> {
    pub fn log_csv(&self) -> String {
        log_csv(&self.log)
    }

    pub fn initial_loss(&self) -> f64 {
        self.log.first().map_or(f64::NAN, |r| r.train_loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.train_loss)
    }
}

/// `step,train_loss,val_loss`; the validation column is empty without a
/// validation set.
pub fn log_csv(log: &[LogRow]) -> String {
    let mut out = String::from("step,train_loss,val_loss\n");
    for r in log {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.step, r.train_loss, val).unwrap();
    }
    out
}

fn frame_loss<T: Real>(weighting: LossWeighting, target: &[T], estimate: &[T], table: &[T]) -> T {
    let j = match weighting {
        LossWeighting::Mse => mse_loss(target, estimate),
        _ => weighted_loss(target, estimate, table),
    };
    j.expect("rows share the bin count")
}

fn frame_loss_grad<T: Real>(weighting: LossWeighting, target: &[T], estimate: &[T], table: &[T]) -> Vec<T> {
    let g = match weighting {
        LossWeighting::Mse => mse_loss_grad(target, estimate),
        _ => weighted_loss_grad(target, estimate, table),
    };
    g.expect("rows share the bin count")
}

fn cast_row<T: Real>(row: &[f64]) -> Vec<T> {
    row.iter().map(|&v| T::cast(v)).collect()
}

/// Normalized inputs of the given examples as a batch matrix.
fn input_batch<T: Real>(ds: &Dataset, stats: &FeatureStats, rows: &[usize]) -> Matrix<T> {
    let d = ds.input_dim();
    let mut data = Vec::with_capacity(rows.len() * d);
    let mut buf = vec![0.0; d];
    for &i in rows {
        buf.copy_from_slice(ds.input(i));
        stats.normalize(&mut buf);
        data.extend(buf.iter().map(|&v| T::cast(v)));
    }
    Matrix::from_vec(rows.len(), d, data)
}

/// Mean per-frame loss of `model` over `ds`, inference mode.
pub fn evaluate_loss<T: Real>(model: &Model<T>, ds: &Dataset, stats: &FeatureStats) -> Result<f64, PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::EmptySplit("evaluation"));
    }
    let mut total = 0.0;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (mask, _) = forward(model, &input_batch::<T>(ds, stats, chunk), Mode::Infer)?;
        for (r, &i) in chunk.iter().enumerate() {
            let noisy: Vec<T> = cast_row(ds.noisy_center(i));
            let estimate: Vec<T> = noisy.iter().zip(mask.row(r)).map(|(&y, &m)| y * m).collect();
            let j = frame_loss(ds.weighting, &cast_row(ds.target(i)), &estimate, &cast_row(ds.weight(i)));
            total += j.as_f64();
        }
    }
    Ok(total / ds.len() as f64)
}

fn check_dataset(ds: &Dataset, topology: &Topology, config: &TrainConfig, name: &'static str) -> Result<(), PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::EmptySplit(name));
    }
    if ds.input_dim() != topology.input_dim || ds.bins != topology.output_dim {
        return Err(PipelineError::DimensionMismatch(format!(
            "{name} examples are {}→{}, network is {}→{}",
            ds.input_dim(),
            ds.bins,
            topology.input_dim,
            topology.output_dim
        )));
    }
    if ds.weighting != config.weighting {
        return Err(PipelineError::InvalidConfig(format!(
            "{name} set was built for {:?}, training uses {:?}",
            ds.weighting, config.weighting
        )));
    }
    Ok(())
}

/// Minibatch training with examples drawn uniformly with replacement.
///
/// The batch loss is the mean per-frame loss of `|Ŝ| = |Y| ⊙ mask`; batch
/// norm running statistics are updated after every step.
pub fn train<T: Real>(
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    stats: &FeatureStats,
    topology: Topology,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, PipelineError> {
    config.validate()?;
    topology.validate()?;
    check_dataset(train_set, &topology, config, "train")?;
    if let Some(v) = val_set {
        check_dataset(v, &topology, config, "validation")?;
    }
    if stats.dim() != topology.input_dim {
        return Err(PipelineError::DimensionMismatch(format!(
            "statistics have {} dimensions, network input {}",
            stats.dim(),
            topology.input_dim
        )));
    }

    let mut model = Model::<T>::init(topology, config.seed)?;
    let mut adam = Adam::new(&model, config.adam);
    let mut sampler = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut dropout = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut log = Vec::new();
    let log_row = |model: &Model<T>, step: u64| -> Result<LogRow, PipelineError> {
        let train_loss = evaluate_loss(model, train_set, stats)?;
        let val_loss = val_set.map(|v| evaluate_loss(model, v, stats)).transpose()?;
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(PipelineError::NonFiniteLoss(step));
        }
        Ok(LogRow {
            step,
            train_loss,
            val_loss,
        })
    };
    log.push(log_row(&model, 0)?);

    let b = config.batch_size;
    let bins = train_set.bins;
    let inv_b = T::cast(1.0 / b as f64);
    let mut rows = vec![0usize; b];
    for step in 1..=config.max_steps {
        for r in rows.iter_mut() {
            *r = sampler.gen_range(0..train_set.len());
        }
        let x = input_batch::<T>(train_set, stats, &rows);
        let (mask, cache) = forward(&model, &x, Mode::Train(&mut dropout))?;

        let mut batch_loss = T::zero();
        let mut grad = Matrix::<T>::zeros(b, bins);
        for (r, &i) in rows.iter().enumerate() {
            let noisy: Vec<T> = cast_row(train_set.noisy_center(i));
            let target: Vec<T> = cast_row(train_set.target(i));
            let table: Vec<T> = cast_row(train_set.weight(i));
            let estimate: Vec<T> = noisy.iter().zip(mask.row(r)).map(|(&y, &m)| y * m).collect();
            batch_loss = batch_loss + frame_loss(config.weighting, &target, &estimate, &table);
            let g = frame_loss_grad(config.weighting, &target, &estimate, &table);
            // d|Ŝ|/dmask = |Y|
            for ((o, &gk), &y) in grad.row_mut(r).iter_mut().zip(&g).zip(&noisy) {
                *o = gk * y * inv_b;
            }
        }
        if !(batch_loss * inv_b).is_finite() {
            return Err(PipelineError::NonFiniteLoss(step));
        }
        let grads = backward(&model, &cache, &grad)?;
        model.update_running_stats(&cache)?;
        adam.step(&mut model, &grads)?;

        if step % config.eval_every == 0 || step == config.max_steps {
            log.push(log_row(&model, step)?);
        }
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use crate::pipeline::dataset::Mixture;
    use crate::pipeline::manifest::Split;
    use crate::synth;

    fn small_sets(weighting: LossWeighting) -> (Dataset, FeatureStats) {
        let stft = StftConfig::default();
        let clean = synth::speech_like(8000, 11);
        let noise = synth::white_noise(8000, 12);
        let m = Mixture::mix(&clean, &noise, 5.0, 0, Split::Train, "white").unwrap();
        let ds = Dataset::from_mixtures([&m], weighting, &stft).unwrap();
        let stats = FeatureStats::fit(&ds).unwrap();
        (ds, stats)
    }

    fn small_topology() -> Topology {
        Topology::new(645, vec![64, 32, 32], 129).with_residual(vec![false, false, true])
    }

    fn config(weighting: LossWeighting, steps: u64) -> TrainConfig {
        TrainConfig {
            max_steps: steps,
            eval_every: 10,
            batch_size: 16,
            weighting,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn unit_weights_reproduce_reference_bitwise() {
        let (mse_ds, stats) = small_sets(LossWeighting::Mse);
        let (ones_ds, _) = small_sets(LossWeighting::Ones);
        let a = train::<f32>(&mse_ds, None, &stats, small_topology(), &config(LossWeighting::Mse, 30)).unwrap();
        let b = train::<f32>(&ones_ds, None, &stats, small_topology(), &config(LossWeighting::Ones, 30)).unwrap();
        assert_eq!(a.log_csv(), b.log_csv());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn same_seed_same_log() {
        let w = LossWeighting::Filter(Default::default());
        let (ds, stats) = small_sets(w);
        let a = train::<f32>(&ds, Some(&ds), &stats, small_topology(), &config(w, 25)).unwrap();
        let b = train::<f32>(&ds, Some(&ds), &stats, small_topology(), &config(w, 25)).unwrap();
        assert_eq!(a.log_csv(), b.log_csv());
        assert_eq!(a.log.len(), 4);
        assert!(a.log.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (ds, stats) = small_sets(LossWeighting::Mse);
        let err = train::<f32>(&ds, None, &stats, small_topology(), &config(LossWeighting::Ones, 1));
        assert!(matches!(err, Err(PipelineError::InvalidConfig(_))));
        let bad = Topology::new(100, vec![8], 129);
        let err = train::<f32>(&ds, None, &stats, bad, &config(LossWeighting::Mse, 1));
        assert!(matches!(err, Err(PipelineError::DimensionMismatch(_))));
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..config(LossWeighting::Mse, 1)
        };
        assert!(matches!(
            train::<f32>(&ds, None, &stats, small_topology(), &zero_batch),
            Err(PipelineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn log_format() {
        let log = [
            LogRow {
                step: 0,
                train_loss: 2.5,
                val_loss: Some(3.0),
            },
            LogRow {
                step: 10,
                train_loss: 1.25,
                val_loss: None,
            },
        ];
        assert_eq!(log_csv(&log), "step,train_loss,val_loss\n0,2.5,3\n10,1.25,\n");
    }
}
