//! Framing, periodic Hann analysis window, STFT and overlap-add synthesis.
//!
//! Frame `ℓ` covers samples `[ℓ·hop, ℓ·hop + frame_len)`; the first frame
//! starts at sample 0 and the tail is zero padded. Synthesis applies no window:
//! a periodic Hann at 50% overlap sums to exactly one, so plain overlap-add
//! reconstructs every sample covered by two frames.

mod fft;

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use thiserror::Error;

pub use fft::{fft, ifft, Fft};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty signal")]
    EmptySignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 16 ms frames at 16 kHz with 50% overlap, `K = 256`.
    fn default() -> Self {
        Self {
            frame_len: 256,
            hop: 128,
            fft_size: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(DspError::InvalidConfig(format!("fft size {} is not a power of two", self.fft_size)));
        }
        if self.frame_len != self.fft_size {
            return Err(DspError::InvalidConfig("frame length must equal the FFT size".into()));
        }
        if self.hop * 2 != self.frame_len {
            return Err(DspError::InvalidConfig("hop must be half the frame length".into()));
        }
        Ok(())
    }

    /// `K/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames needed to cover `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len).div_ceil(self.hop)
        }
    }

    /// Samples covered by two overlapping frames, where overlap-add is exact.
    pub fn interior(&self, len: usize) -> Range<usize> {
        let end = len.min(self.frame_count(len) * self.hop);
        self.hop.min(end)..end
    }
}

/// Periodic Hann window, `w(n) = 0.5 - 0.5·cos(2πn/N)`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// One analysis frame: bins `0..=K/2` of the spectrum of a windowed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub bins: Vec<Complex64>,
}

impl SpectralFrame {
    pub fn magnitude(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.arg()).collect()
    }

    /// Unit-modulus phase factors `X/|X|`, with `1` for zero bins.
    pub fn phase_factors(&self) -> Vec<Complex64> {
        self.bins
            .iter()
            .map(|&c| {
                let m = c.norm();
                if m > 0.0 {
                    c / m
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
            .collect()
    }
}

/// Windowed time-domain frames, zero padded at the tail.
pub fn windowed_frames(samples: &[f64], config: &StftConfig) -> Result<Vec<Vec<f64>>, DspError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let window = hann(config.frame_len);
    let frames = (0..config.frame_count(samples.len()))
        .map(|l| {
            let start = l * config.hop;
            (0..config.frame_len)
                .map(|n| samples.get(start + n).copied().unwrap_or(0.0) * window[n])
                .collect()
        })
        .collect();
    Ok(frames)
}

pub fn stft(samples: &[f64], config: &StftConfig) -> Result<Vec<SpectralFrame>, DspError> {
    let frames = windowed_frames(samples, config)?;
    let plan = Fft::new(config.fft_size);
    let bins = config.bins();
    let mut buf = vec![Complex64::default(); config.fft_size];
    Ok(frames
        .into_iter()
        .map(|frame| {
            for (b, x) in buf.iter_mut().zip(frame) {
                *b = Complex64::new(x, 0.0);
            }
            plan.forward(&mut buf);
            SpectralFrame {
                bins: buf[..bins].to_vec(),
            }
        })
        .collect())
}

/// Resynthesizes a signal of `len` samples from per-frame magnitudes and the
/// phases of `phase_source`.
pub fn istft(
    magnitudes: &[Vec<f64>],
    phase_source: &[SpectralFrame],
    config: &StftConfig,
    len: usize,
) -> Result<Vec<f64>, DspError> {
    config.validate()?;
    if magnitudes.len() != phase_source.len() {
        return Err(DspError::LengthMismatch(format!(
            "{} magnitude frames vs {} phase frames",
            magnitudes.len(),
            phase_source.len()
        )));
    }
    let bins = config.bins();
    let k = config.fft_size;
    let plan = Fft::new(k);
    let mut out = vec![0.0; (magnitudes.len().saturating_sub(1)) * config.hop + config.frame_len];
    let mut buf = vec![Complex64::default(); k];

    for (l, (mag, src)) in magnitudes.iter().zip(phase_source).enumerate() {
        if mag.len() != bins || src.bins.len() != bins {
            return Err(DspError::LengthMismatch(format!("frame {l} does not have {bins} bins")));
        }
        for (i, phase) in src.phase_factors().into_iter().enumerate() {
            buf[i] = phase * mag[i];
        }
        // real-signal spectrum: DC and Nyquist are real
        buf[0] = Complex64::new(buf[0].re, 0.0);
        buf[k / 2] = Complex64::new(buf[k / 2].re, 0.0);
        for i in 1..k / 2 {
            buf[k - i] = buf[i].conj();
        }
        plan.inverse(&mut buf);
        let start = l * config.hop;
        for (o, b) in out[start..start + config.frame_len].iter_mut().zip(&buf) {
            *o += b.re;
        }
    }
    out.resize(len, 0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        let bad = StftConfig { hop: 100, ..StftConfig::default() };
        assert!(bad.validate().is_err());
        let bad = StftConfig { frame_len: 200, fft_size: 200, hop: 100 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_counts() {
        let c = StftConfig::default();
        assert_eq!(c.frame_count(1), 1);
        assert_eq!(c.frame_count(256), 1);
        assert_eq!(c.frame_count(257), 2);
        assert_eq!(c.frame_count(384), 2);
        assert_eq!(c.frame_count(385), 3);
    }

    #[test]
    fn hann_is_cola_at_half_overlap() {
        let w = hann(256);
        for n in 0..128 {
            assert!((w[n] + w[n + 128] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        for f in stft(&vec![0.0; 1000], &StftConfig::default()).unwrap() {
            assert!(f.bins.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn dc_bin_is_window_sum() {
        let cfg = StftConfig::default();
        let frames = stft(&vec![1.0; 2000], &cfg).unwrap();
        let wsum: f64 = hann(256).iter().sum();
        for f in &frames[..frames.len() - 2] {
            assert!((f.bins[0].re - wsum).abs() < 1e-9);
            assert_eq!(f.bins[0].im, 0.0);
        }
    }

    #[test]
    fn edge_bins_are_real() {
        for f in stft(&random_signal(1, 3000), &StftConfig::default()).unwrap() {
            assert!(f.bins[0].im.abs() < 1e-12);
            assert!(f.bins[128].im.abs() < 1e-12);
        }
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..4000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).cos()).collect();
        let frames = stft(&x, &cfg).unwrap();
        for f in &frames[1..frames.len() - 2] {
            let mag = f.magnitude();
            let peak = (0..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
            assert_eq!(peak, 16);
            // closed form: windowed cosine at a bin center has |X(16)| = sum(w)/2
            assert!((mag[16] - 64.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_is_exact_in_the_interior() {
        let cfg = StftConfig::default();
        for (seed, len) in [(1, 16000), (2, 1000), (3, 300)] {
            let x = random_signal(seed, len);
            let frames = stft(&x, &cfg).unwrap();
            let mags: Vec<_> = frames.iter().map(|f| f.magnitude()).collect();
            let y = istft(&mags, &frames, &cfg, len).unwrap();
            assert_eq!(y.len(), len);
            for n in cfg.interior(len) {
                assert!((x[n] - y[n]).abs() < 1e-10, "sample {n}");
            }
        }
    }

    #[test]
    fn zero_and_scaled_magnitudes() {
        let cfg = StftConfig::default();
        let x = random_signal(9, 2000);
        let frames = stft(&x, &cfg).unwrap();
        let zeros = vec![vec![0.0; 129]; frames.len()];
        assert!(istft(&zeros, &frames, &cfg, 2000).unwrap().iter().all(|&v| v == 0.0));

        let mags: Vec<_> = frames.iter().map(|f| f.magnitude()).collect();
        let doubled: Vec<Vec<f64>> = mags.iter().map(|m| m.iter().map(|v| 2.0 * v).collect()).collect();
        let a = istft(&mags, &frames, &cfg, 2000).unwrap();
        let b = istft(&doubled, &frames, &cfg, 2000).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(2.0 * u, *v);
        }
    }

    #[test]
    fn istft_rejects_mismatched_frames() {
        let cfg = StftConfig::default();
        let frames = stft(&random_signal(2, 1000), &cfg).unwrap();
        let mags = vec![vec![0.0; 129]; frames.len() - 1];
        assert!(matches!(istft(&mags, &frames, &cfg, 1000), Err(DspError::LengthMismatch(_))));
        let mags = vec![vec![0.0; 100]; frames.len()];
        assert!(matches!(istft(&mags, &frames, &cfg, 1000), Err(DspError::LengthMismatch(_))));
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let x = random_signal(4, 1500);
        let frames = windowed_frames(&x, &cfg).unwrap();
        for frame in frames {
            let spec = fft(&frame);
            let time: f64 = frame.iter().map(|v| v * v).sum();
            let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / 256.0;
            if time > 0.0 {
                assert!((time - freq).abs() / time < 1e-9);
            }
        }
    }
}
