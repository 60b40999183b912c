//! Inference path and `WFM1` mask traces.
//!
//! Mask trace layout: `"WFM1"`, u32 frame count, u32 bin count, the mask
//! values row by row as f64 little-endian, then the u64 checksum of the
//! values.

use std::fs;
use std::path::Path;

use super::dataset::context_input;
use super::stats::FeatureStats;
use super::{io_failure, PipelineError};
use crate::audio::{Role, Utterance, SAMPLE_RATE};
use crate::checksum::checksum64;
use crate::dsp::{istft, stft, SpectralFrame, StftConfig};
use crate::neural::{forward, Matrix, Mode, Model, Real};

pub const MASK_MAGIC: &[u8; 4] = b"WFM1";

const INFER_CHUNK: usize = 1024;

/// Per-frame masks of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTrace {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl MaskTrace {
    pub fn constant(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            frames,
            bins,
            values: vec![value; frames * bins],
        }
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.values[l * self.bins..(l + 1) * self.bins]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MASK_MAGIC.to_vec();
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.bins as u32).to_le_bytes());
        let mut payload = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&payload);
        out.extend_from_slice(&checksum64(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() < 4 || &bytes[..4] != MASK_MAGIC {
            return Err(PipelineError::VersionMismatch("not a WFM1 mask trace".into()));
        }
        if bytes.len() < 20 {
            return Err(PipelineError::ChecksumMismatch);
        }
        let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_len = frames * bins * 8;
        if bytes.len() != 12 + payload_len + 8 {
            return Err(PipelineError::ChecksumMismatch);
        }
        let payload = &bytes[12..12 + payload_len];
        let stored = u64::from_le_bytes(bytes[12 + payload_len..].try_into().unwrap());
        if checksum64(payload) != stored {
            return Err(PipelineError::ChecksumMismatch);
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { frames, bins, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(io_failure(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(io_failure(path))?)
    }
}

/// Checks that a model and statistics fit the STFT configuration.
pub fn check_compatible<T: Real>(model: &Model<T>, stats: &FeatureStats, config: &StftConfig) -> Result<(), PipelineError> {
    let bins = config.bins();
    let t = &model.topology;
    if stats.dim() != t.input_dim || t.input_dim != (2 * super::CONTEXT + 1) * bins || t.output_dim != bins {
        return Err(PipelineError::DimensionMismatch(format!(
            "model {}→{}, statistics {}, spectrum {} bins",
            t.input_dim,
            t.output_dim,
            stats.dim(),
            bins
        )));
    }
    Ok(())
}

/// Inference-mode masks for noisy magnitude frames.
pub fn predict_masks<T: Real>(
    model: &Model<T>,
    stats: &FeatureStats,
    magnitudes: &[Vec<f64>],
) -> Result<MaskTrace, PipelineError> {
    let bins = model.topology.output_dim;
    let d = model.topology.input_dim;
    let mut values = Vec::with_capacity(magnitudes.len() * bins);
    let frames: Vec<usize> = (0..magnitudes.len()).collect();
    let mut row = Vec::with_capacity(d);
    for chunk in frames.chunks(INFER_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * d);
        for &l in chunk {
            row.clear();
            context_input(magnitudes, l, &mut row);
            stats.normalize(&mut row);
            data.extend(row.iter().map(|&v| T::cast(v)));
        }
        let (mask, _) = forward(model, &Matrix::from_vec(chunk.len(), d, data), Mode::Infer)?;
        values.extend(mask.data.iter().map(|m| m.as_f64()));
    }
    Ok(MaskTrace {
        frames: magnitudes.len(),
        bins,
        values,
    })
}

/// `ISTFT(mask ⊙ |X|, phase of X)` trimmed to `len` samples.
pub fn apply_mask(
    spectrum: &[SpectralFrame],
    masks: &MaskTrace,
    config: &StftConfig,
    len: usize,
) -> Result<Vec<f64>, PipelineError> {
    if masks.frames != spectrum.len() || masks.bins != config.bins() {
        return Err(PipelineError::LengthMismatch(format!(
            "mask trace is {}x{}, spectrum {}x{}",
            masks.frames,
            masks.bins,
            spectrum.len(),
            config.bins()
        )));
    }
    let shaped: Vec<Vec<f64>> = spectrum
        .iter()
        .enumerate()
        .map(|(l, f)| f.magnitude().iter().zip(masks.frame(l)).map(|(a, m)| a * m).collect())
        .collect();
    Ok(istft(&shaped, spectrum, config, len)?)
}

/// Enhances a noisy utterance and returns it with the masks used.
pub fn enhance<T: Real>(
    model: &Model<T>,
    stats: &FeatureStats,
    noisy: &Utterance,
    config: &StftConfig,
) -> Result<(Utterance, MaskTrace), PipelineError> {
    if noisy.sample_rate != SAMPLE_RATE {
        return Err(PipelineError::SampleRateMismatch {
            expected: SAMPLE_RATE,
            found: noisy.sample_rate,
        });
    }
    check_compatible(model, stats, config)?;
    let spectrum = stft(&noisy.samples, config)?;
    let magnitudes: Vec<Vec<f64>> = spectrum.iter().map(|f| f.magnitude()).collect();
    let masks = predict_masks(model, stats, &magnitudes)?;
    let out = apply_mask(&spectrum, &masks, config, noisy.len())?;
    Ok((Utterance::new(out, Role::Enhanced), masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Full-size model whose output layer ignores its input: every mask entry
    /// is `sigmoid(bias)`.
    fn constant_model(bias: f32) -> (Model<f32>, FeatureStats) {
        let mut m = Model::<f32>::init(Topology::default(), 3).unwrap();
        m.output.dense.weight.data.iter_mut().for_each(|w| *w = 0.0);
        m.output.dense.bias.iter_mut().for_each(|b| *b = bias);
        let stats = FeatureStats {
            mean: vec![0.0; 645],
            std: vec![1.0; 645],
        };
        (m, stats)
    }

    fn noisy(n: usize) -> Utterance {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        Utterance::new((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(), Role::Mixture)
    }

    #[test]
    fn unit_mask_reconstructs_input() {
        let (m, stats) = constant_model(40.0);
        let cfg = StftConfig::default();
        let y = noisy(5000);
        let (out, masks) = enhance(&m, &stats, &y, &cfg).unwrap();
        assert!(masks.values.iter().all(|&v| v == 1.0));
        assert_eq!(out.len(), y.len());
        for i in cfg.interior(y.len()) {
            assert!((out.samples[i] - y.samples[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn half_mask_halves_every_frame() {
        let (m, stats) = constant_model(0.0);
        let cfg = StftConfig::default();
        let y = noisy(3000);
        let (out, masks) = enhance(&m, &stats, &y, &cfg).unwrap();
        assert!(masks.values.iter().all(|&v| v == 0.5));
        let spectrum = stft(&y.samples, &cfg).unwrap();
        let mags: Vec<Vec<f64>> = spectrum.iter().map(|f| f.magnitude().iter().map(|a| 0.5 * a).collect()).collect();
        let expected = istft(&mags, &spectrum, &cfg, y.len()).unwrap();
        assert_eq!(out.samples, expected);
        for i in cfg.interior(y.len()) {
            assert!((out.samples[i] - 0.5 * y.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn output_length_matches_input() {
        let (m, stats) = constant_model(1.0);
        let cfg = StftConfig::default();
        for n in [1, 255, 256, 257, 1000] {
            assert_eq!(enhance(&m, &stats, &noisy(n), &cfg).unwrap().0.len(), n);
        }
    }

    #[test]
    fn mismatches_are_rejected() {
        let (m, stats) = constant_model(0.0);
        let cfg = StftConfig::default();
        let mut y = noisy(1000);
        y.sample_rate = 8000;
        assert!(matches!(enhance(&m, &stats, &y, &cfg), Err(PipelineError::SampleRateMismatch { .. })));
        let short = FeatureStats {
            mean: vec![0.0; 10],
            std: vec![1.0; 10],
        };
        assert!(matches!(
            enhance(&m, &short, &noisy(1000), &cfg),
            Err(PipelineError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn trace_round_trip() {
        let t = MaskTrace {
            frames: 3,
            bins: 2,
            values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        };
        let bytes = t.to_bytes();
        assert_eq!(MaskTrace::from_bytes(&bytes).unwrap(), t);
        assert!(matches!(MaskTrace::from_bytes(&bytes[..30]), Err(PipelineError::ChecksumMismatch)));
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(MaskTrace::from_bytes(&bad), Err(PipelineError::VersionMismatch(_))));
    }
}
