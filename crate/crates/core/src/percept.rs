//! LP analysis, CELP perceptual weighting filters and the weighted spectral loss.
//!
//! Two filter shapes are supported:
//!
//! - AMR: `W(z) = (1 - A(z/γ1)) / (1 - A(z/γ2))`
//! - AMR-WB: `W(z) = 1 - A'(z/γ1)`, with `A'` fitted to preemphasized speech
//!
//! where `A(z/γ) = Σ a(i)·γ^i·z^-i` and `1 - A(z)` is the LP inverse filter.
//! The loss sampled at `z = e^{j2πk/K}` weights the magnitude error of each
//! half-spectrum bin, counting the interior bins twice for their mirror images.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Float;
use thiserror::Error;

use crate::dsp::{self, StftConfig};

/// Ridge applied to `r(0)` before the Levinson recursion.
pub const WHITE_NOISE_CORRECTION: f64 = 1e-4;
pub const RIDGE_FLOOR: f64 = 1e-12;
/// Frames with less (windowed) energy than this get an all-ones table.
pub const SILENCE_ENERGY: f64 = 1e-10;
const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error("autocorrelation is singular at recursion step {step} (reflection {reflection})")]
    SingularAutocorrelation { step: usize, reflection: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("silent frame: no spectral envelope to analyze")]
    SilentFrame,
    #[error("invalid weighting configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
}

/// Predictor coefficients `a(1..=Np)` of `A(z)`, the reflection coefficients
/// from the recursion and the final prediction error energy.
#[derive(Debug, Clone, PartialEq)]
pub struct LpCoeffs {
    pub a: Vec<f64>,
    pub reflection: Vec<f64>,
    pub error: f64,
}

impl LpCoeffs {
    pub fn order(&self) -> usize {
        self.a.len()
    }

    /// Coefficients only, with unit error and no reflection record.
    pub fn from_coefficients(a: Vec<f64>) -> Self {
        Self {
            a,
            reflection: Vec::new(),
            error: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightVariant {
    Amr,
    AmrWb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub variant: WeightVariant,
    pub gamma1: f64,
    /// Denominator factor; AMR only.
    pub gamma2: f64,
    /// Preemphasis factor; AMR-WB only.
    pub beta: f64,
    pub order: usize,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self::amr(0.92, 0.6)
    }
}

impl WeightConfig {
    pub fn amr(gamma1: f64, gamma2: f64) -> Self {
        Self {
            variant: WeightVariant::Amr,
            gamma1,
            gamma2,
            beta: 0.68,
            order: 16,
        }
    }

    pub fn amr_wb(gamma1: f64, beta: f64) -> Self {
        Self {
            variant: WeightVariant::AmrWb,
            gamma1,
            gamma2: 0.6,
            beta,
            order: 16,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptError> {
        let unit = |name: &str, g: f64| {
            if g > 0.0 && g <= 1.0 {
                Ok(())
            } else {
                Err(PerceptError::InvalidConfig(format!("{name} = {g} is outside (0, 1]")))
            }
        };
        unit("gamma1", self.gamma1)?;
        if self.variant == WeightVariant::Amr {
            unit("gamma2", self.gamma2)?;
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(PerceptError::InvalidConfig(format!("beta = {} is outside [0, 1)", self.beta)));
        }
        if self.order == 0 {
            return Err(PerceptError::InvalidConfig("LP order must be positive".into()));
        }
        Ok(())
    }
}

/// Per-bin amplitude response `|W(k)|` for `k = 0..=K/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable(pub Vec<f64>);

impl WeightTable {
    pub fn ones(bins: usize) -> Self {
        Self(vec![1.0; bins])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Biased autocorrelation `r(m) = Σ x(n)·x(n+m)` for `m = 0..=max_lag`.
pub fn autocorrelate_raw(frame: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|m| {
            if m >= frame.len() {
                0.0
            } else {
                frame[m..].iter().zip(frame).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// [`autocorrelate_raw`] followed by the `r(0)` ridge.
pub fn autocorrelate(frame: &[f64], max_lag: usize) -> Vec<f64> {
    let mut r = autocorrelate_raw(frame, max_lag);
    r[0] = r[0] * (1.0 + WHITE_NOISE_CORRECTION) + RIDGE_FLOOR;
    r
}

/// Solves the Toeplitz normal equations for the predictor `1 - A(z)`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpCoeffs, PerceptError> {
    if r.len() <= order {
        return Err(PerceptError::LengthMismatch(format!(
            "order {order} needs {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(PerceptError::SingularAutocorrelation {
            step: 0,
            reflection: f64::NAN,
        });
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut error = r[0];

    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = acc / error;
        if !(k.abs() < 1.0) {
            return Err(PerceptError::SingularAutocorrelation {
                step: i + 1,
                reflection: k,
            });
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        reflection.push(k);
        error *= 1.0 - k * k;
    }
    Ok(LpCoeffs { a, reflection, error })
}

/// `a(i)·γ^i`, the coefficients of `A(z/γ)`.
pub fn bandwidth_expand(a: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = 1.0;
    a.iter()
        .map(|&c| {
            g *= gamma;
            c * g
        })
        .collect()
}

/// `|1 - Σ c(i)·e^{-j2πki/K}|` for `k = 0..=K/2`.
fn inverse_filter_magnitude(c: &[f64], fft_size: usize) -> Vec<f64> {
    (0..=fft_size / 2)
        .map(|k| {
            let mut acc = Complex64::new(1.0, 0.0);
            for (i, &ci) in c.iter().enumerate() {
                let phase = -2.0 * PI * ((k * (i + 1)) % fft_size) as f64 / fft_size as f64;
                acc -= ci * Complex64::from_polar(1.0, phase);
            }
            acc.norm()
        })
        .collect()
}

/// Samples the weighting filter's amplitude response on the half spectrum.
pub fn weight_response(lp: &LpCoeffs, config: &WeightConfig, fft_size: usize) -> WeightTable {
    let numerator = inverse_filter_magnitude(&bandwidth_expand(&lp.a, config.gamma1), fft_size);
    match config.variant {
        WeightVariant::AmrWb => WeightTable(numerator),
        WeightVariant::Amr => {
            let denominator = inverse_filter_magnitude(&bandwidth_expand(&lp.a, config.gamma2), fft_size);
            WeightTable(
                numerator
                    .iter()
                    .zip(&denominator)
                    .map(|(n, d)| n / d.max(DENOMINATOR_FLOOR))
                    .collect(),
            )
        }
    }
}

/// LP analysis of one windowed frame; `None` for silent or degenerate frames.
pub fn analyze_lp(windowed_frame: &[f64], order: usize) -> Option<LpCoeffs> {
    let raw = autocorrelate_raw(windowed_frame, order);
    if raw[0] < SILENCE_ENERGY {
        return None;
    }
    let mut r = raw;
    r[0] = r[0] * (1.0 + WHITE_NOISE_CORRECTION) + RIDGE_FLOOR;
    levinson_durbin(&r, order).ok()
}

/// Weight table for one windowed clean frame, all ones when the frame is
/// silent or LP analysis fails.
pub fn frame_weights(windowed_frame: &[f64], config: &WeightConfig, fft_size: usize) -> WeightTable {
    match analyze_lp(windowed_frame, config.order) {
        Some(lp) => weight_response(&lp, config, fft_size),
        None => WeightTable::ones(fft_size / 2 + 1),
    }
}

/// Per-frame weight tables for a clean utterance, framed exactly like the STFT.
///
/// The AMR-WB variant preemphasizes the whole utterance once before framing.
pub fn utterance_weights(
    clean: &[f64],
    config: &WeightConfig,
    stft: &StftConfig,
) -> Result<Vec<WeightTable>, PerceptError> {
    config.validate()?;
    let emphasized;
    let source = match config.variant {
        WeightVariant::Amr => clean,
        WeightVariant::AmrWb => {
            emphasized = preemphasize(clean, config.beta);
            &emphasized
        }
    };
    let frames = dsp::windowed_frames(source, stft)?;
    Ok(frames
        .iter()
        .map(|f| frame_weights(f, config, stft.fft_size))
        .collect())
}

/// `y(n) = x(n) - β·x(n-1)` with `x(-1) = 0`.
pub fn preemphasize(x: &[f64], beta: f64) -> Vec<f64> {
    let mut prev = 0.0;
    x.iter()
        .map(|&v| {
            let y = v - beta * prev;
            prev = v;
            y
        })
        .collect()
}

fn bin_factor<T: Float>(k: usize, bins: usize) -> T {
    if k == 0 || k + 1 == bins {
        T::one()
    } else {
        T::one() + T::one()
    }
}

fn check_lengths(target: usize, estimate: usize, table: usize) -> Result<(), PerceptError> {
    if target != estimate || target != table || target < 2 {
        return Err(PerceptError::LengthMismatch(format!(
            "target {target}, estimate {estimate}, weights {table}"
        )));
    }
    Ok(())
}

/// Weighted half-spectrum loss
/// `J = E_w(0)² + E_w(K/2)² + 2·Σ_{k=1}^{K/2-1} E_w(k)²`
/// with `E_w(k) = |W(k)|·(|S(k)| - |Ŝ(k)|)`.
pub fn weighted_loss<T: Float>(target: &[T], estimate: &[T], table: &[T]) -> Result<T, PerceptError> {
    check_lengths(target.len(), estimate.len(), table.len())?;
    let bins = target.len();
    let mut j = T::zero();
    for k in 0..bins {
        let e = table[k] * (target[k] - estimate[k]);
        j = j + bin_factor::<T>(k, bins) * e * e;
    }
    Ok(j)
}

/// `∂J/∂|Ŝ(k)| = -2·c_k·|W(k)|²·E(k)`.
pub fn weighted_loss_grad<T: Float>(target: &[T], estimate: &[T], table: &[T]) -> Result<Vec<T>, PerceptError> {
    check_lengths(target.len(), estimate.len(), table.len())?;
    let bins = target.len();
    let two = T::one() + T::one();
    Ok((0..bins)
        .map(|k| {
            let w = table[k];
            -(two * bin_factor::<T>(k, bins) * (w * w) * (target[k] - estimate[k]))
        })
        .collect())
}

/// The unweighted reference loss, i.e. [`weighted_loss`] with `|W| ≡ 1`,
/// evaluated without touching a table.
pub fn mse_loss<T: Float>(target: &[T], estimate: &[T]) -> Result<T, PerceptError> {
    check_lengths(target.len(), estimate.len(), target.len())?;
    let bins = target.len();
    let mut j = T::zero();
    for k in 0..bins {
        let e = target[k] - estimate[k];
        j = j + bin_factor::<T>(k, bins) * e * e;
    }
    Ok(j)
}

pub fn mse_loss_grad<T: Float>(target: &[T], estimate: &[T]) -> Result<Vec<T>, PerceptError> {
    check_lengths(target.len(), estimate.len(), target.len())?;
    let bins = target.len();
    let two = T::one() + T::one();
    Ok((0..bins)
        .map(|k| -(two * bin_factor::<T>(k, bins) * (target[k] - estimate[k])))
        .collect())
}

/// Spectral envelope, noise spectrum and inverse-weighted noise spectrum of a
/// frame, each as `10·log10(|·|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnalysis {
    pub envelope_db: Vec<f64>,
    pub noise_db: Vec<f64>,
    pub shaped_noise_db: Vec<f64>,
}

impl FrameAnalysis {
    /// CSV with header `k,envelope_db,noise_db,shaped_noise_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,envelope_db,noise_db,shaped_noise_db\n");
        for k in 0..self.envelope_db.len() {
            out.push_str(&format!(
                "{k},{},{},{}\n",
                self.envelope_db[k], self.noise_db[k], self.shaped_noise_db[k]
            ));
        }
        out
    }
}

fn power_db(magnitude: f64) -> f64 {
    10.0 * (magnitude * magnitude).log10()
}

/// Analysis of a Hann-windowed clean frame against a noise magnitude spectrum.
pub fn analyze_frame(
    windowed_clean: &[f64],
    noise_mag: &[f64],
    config: &WeightConfig,
    fft_size: usize,
) -> Result<FrameAnalysis, PerceptError> {
    config.validate()?;
    let source = match config.variant {
        WeightVariant::Amr => windowed_clean.to_vec(),
        WeightVariant::AmrWb => preemphasize(windowed_clean, config.beta),
    };
    let lp = analyze_lp(&source, config.order).ok_or(PerceptError::SilentFrame)?;
    analyze_with_lp(&lp, noise_mag, config, fft_size)
}

/// [`analyze_frame`] with the LP model supplied. The envelope is
/// `sqrt(error) / |1 - A(e^{jω})|`, the magnitude an LP-modelled frame would have.
pub fn analyze_with_lp(
    lp: &LpCoeffs,
    noise_mag: &[f64],
    config: &WeightConfig,
    fft_size: usize,
) -> Result<FrameAnalysis, PerceptError> {
    let bins = fft_size / 2 + 1;
    if noise_mag.len() != bins {
        return Err(PerceptError::LengthMismatch(format!(
            "noise spectrum has {} bins, expected {bins}",
            noise_mag.len()
        )));
    }
    let table = weight_response(lp, config, fft_size);
    let gain = lp.error.sqrt();
    let envelope_db = inverse_filter_magnitude(&lp.a, fft_size)
        .into_iter()
        .map(|m| power_db(gain / m.max(DENOMINATOR_FLOOR)))
        .collect();
    let noise_db = noise_mag.iter().map(|&m| power_db(m)).collect();
    let shaped_noise_db = noise_mag
        .iter()
        .zip(&table.0)
        .map(|(&m, &w)| power_db(m / w))
        .collect();
    Ok(FrameAnalysis {
        envelope_db,
        noise_db,
        shaped_noise_db,
    })
}
