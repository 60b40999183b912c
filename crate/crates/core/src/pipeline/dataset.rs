use rayon::prelude::*;

use super::manifest::Split;
use super::PipelineError;
use crate::audio::{mix_at_snr, Utterance};
use crate::dsp::{stft, StftConfig};
use crate::percept::{utterance_weights, WeightConfig};

/// Context frames on each side of the center frame.
pub const CONTEXT: usize = 2;

/// Which loss the training loop optimizes, and so which weight tables the
/// dataset carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeighting {
    /// Unweighted reference loss; tables are all ones and never read.
    Mse,
    /// Weighted loss evaluated with all-ones tables.
    Ones,
    /// Weighted loss with tables from the perceptual weighting filter.
    Filter(WeightConfig),
}

/// One clean/noise/mixture triple with `mixture == clean + noise` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub mixture: Vec<f64>,
    pub snr_db: f64,
    pub split: Split,
    /// Noise condition label used for report grouping.
    pub condition: String,
}

impl Mixture {
    pub fn mix(
        clean: &Utterance,
        noise: &Utterance,
        snr_db: f64,
        offset: usize,
        split: Split,
        condition: impl Into<String>,
    ) -> Result<Self, PipelineError> {
        let (mixture, scaled) = mix_at_snr(clean, noise, snr_db, offset)?;
        Ok(Self {
            clean: clean.samples.clone(),
            noise: scaled.samples,
            mixture: mixture.samples,
            snr_db,
            split,
            condition: condition.into(),
        })
    }
}

/// Row-major example store: normalized-ready inputs of `(2·CONTEXT+1)·bins`
/// magnitudes, plus per-frame targets, center noisy magnitudes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bins: usize,
    pub weighting: LossWeighting,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub noisy: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Dataset {
    pub fn empty(bins: usize, weighting: LossWeighting) -> Self {
        Self {
            bins,
            weighting,
            inputs: Vec::new(),
            targets: Vec::new(),
            noisy: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        (2 * CONTEXT + 1) * self.bins
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.bins..(i + 1) * self.bins]
    }

    pub fn noisy_center(&self, i: usize) -> &[f64] {
        &self.noisy[i * self.bins..(i + 1) * self.bins]
    }

    pub fn weight(&self, i: usize) -> &[f64] {
        &self.weights[i * self.bins..(i + 1) * self.bins]
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.inputs.extend_from_slice(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
        self.noisy.extend_from_slice(&other.noisy);
        self.weights.extend_from_slice(&other.weights);
    }

    /// Examples of every mixture in order, extracted in parallel.
    pub fn from_mixtures<'a>(
        mixtures: impl IntoIterator<Item = &'a Mixture>,
        weighting: LossWeighting,
        config: &StftConfig,
    ) -> Result<Self, PipelineError> {
        let items: Vec<&Mixture> = mixtures.into_iter().collect();
        let parts: Vec<Dataset> = items
            .par_iter()
            .map(|m| extract_examples(&m.clean, &m.mixture, weighting, config))
            .collect::<Result<_, _>>()?;
        let mut out = Dataset::empty(config.bins(), weighting);
        for p in &parts {
            out.extend(p);
        }
        Ok(out)
    }
}

/// Concatenated magnitudes of frames `l-2 ..= l+2`, replicating the first and
/// last frame at the utterance edges.
pub fn context_input(magnitudes: &[Vec<f64>], l: usize, out: &mut Vec<f64>) {
    let last = magnitudes.len() - 1;
    for offset in -(CONTEXT as isize)..=CONTEXT as isize {
        let j = (l as isize + offset).clamp(0, last as isize) as usize;
        out.extend_from_slice(&magnitudes[j]);
    }
}

/// Per-frame training examples of one utterance pair.
pub fn extract_examples(
    clean: &[f64],
    mixture: &[f64],
    weighting: LossWeighting,
    config: &StftConfig,
) -> Result<Dataset, PipelineError> {
    if clean.len() != mixture.len() {
        return Err(PipelineError::LengthMismatch(format!(
            "clean has {} samples, mixture {}",
            clean.len(),
            mixture.len()
        )));
    }
    let noisy: Vec<Vec<f64>> = stft(mixture, config)?.iter().map(|f| f.magnitude()).collect();
    let target: Vec<Vec<f64>> = stft(clean, config)?.iter().map(|f| f.magnitude()).collect();
    let bins = config.bins();
    let tables: Vec<Vec<f64>> = match weighting {
        LossWeighting::Mse | LossWeighting::Ones => vec![vec![1.0; bins]; noisy.len()],
        LossWeighting::Filter(cfg) => utterance_weights(clean, &cfg, config)?.into_iter().map(|t| t.0).collect(),
    };

    let mut ds = Dataset::empty(bins, weighting);
    for l in 0..noisy.len() {
        context_input(&noisy, l, &mut ds.inputs);
        ds.targets.extend_from_slice(&target[l]);
        ds.noisy.extend_from_slice(&noisy[l]);
        ds.weights.extend_from_slice(&tables[l]);
    }
    Ok(ds)
}
