//! Component-filtered evaluation: SSDR, ΔSNR and report tables.
//!
//! The mask estimated on the mixture is applied separately to the clean
//! speech and noise spectra, each with its own phase, giving time-aligned
//! filtered components `s̃` and `d̃`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dsp::{stft, DspError, StftConfig};
use crate::pipeline::enhance::apply_mask;
use crate::pipeline::{MaskTrace, PipelineError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask trace has {found} frames, signals have {expected}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no speech-active frames")]
    NoActiveFrames,
    #[error("filtered noise component has zero energy")]
    ZeroNoiseComponent,
    #[error("invalid metrics configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdrConfig {
    pub r_min: f64,
    pub r_max: f64,
    /// Frames more than this many dB below the loudest clean frame are
    /// treated as speech pauses.
    pub vad_threshold_db: f64,
    pub energy_floor: f64,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for SsdrConfig {
    fn default() -> Self {
        Self {
            r_min: -10.0,
            r_max: 30.0,
            vad_threshold_db: 40.0,
            energy_floor: 1e-10,
            frame_len: 256,
            hop: 128,
        }
    }
}

impl SsdrConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.r_min < self.r_max) {
            return Err(MetricsError::InvalidConfig(format!(
                "r_min {} must be below r_max {}",
                self.r_min, self.r_max
            )));
        }
        if self.frame_len == 0 || self.hop == 0 || self.hop > self.frame_len {
            return Err(MetricsError::InvalidConfig("need 0 < hop <= frame length".into()));
        }
        if !(self.vad_threshold_db >= 0.0) || !(self.energy_floor >= 0.0) {
            return Err(MetricsError::InvalidConfig("VAD threshold and energy floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Mask-filtered speech and noise components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPair {
    pub s_tilde: Vec<f64>,
    pub d_tilde: Vec<f64>,
}

fn from_pipeline(e: PipelineError) -> MetricsError {
    match e {
        PipelineError::Dsp(d) => MetricsError::Dsp(d),
        other => MetricsError::LengthMismatch(other.to_string()),
    }
}

/// Filters one component with the mixture's masks.
///
/// The signal is padded by one hop of zeros on each side so that every
/// original sample lies under two analysis windows; padded frame `j` is
/// original frame `j - 1`, and the two extra edge frames reuse the nearest
/// mask frame.
fn filter_one(x: &[f64], masks: &MaskTrace, config: &StftConfig) -> Result<Vec<f64>, MetricsError> {
    let hop = config.hop;
    let mut padded = vec![0.0; x.len() + 2 * hop];
    padded[hop..hop + x.len()].copy_from_slice(x);
    let spectrum = stft(&padded, config)?;
    let last = masks.frames - 1;
    let mut values = Vec::with_capacity(spectrum.len() * masks.bins);
    for j in 0..spectrum.len() {
        values.extend_from_slice(masks.frame(j.saturating_sub(1).min(last)));
    }
    let padded_masks = MaskTrace {
        frames: spectrum.len(),
        bins: masks.bins,
        values,
    };
    let y = apply_mask(&spectrum, &padded_masks, config, padded.len()).map_err(from_pipeline)?;
    Ok(y[hop..hop + x.len()].to_vec())
}

/// `s̃ = ISTFT(mask ⊙ |S|, ∠S)` and `d̃ = ISTFT(mask ⊙ |D|, ∠D)`.
pub fn filter_components(
    clean: &[f64],
    noise: &[f64],
    masks: &MaskTrace,
    config: &StftConfig,
) -> Result<ComponentPair, MetricsError> {
    config.validate()?;
    if clean.len() != noise.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "clean has {} samples, noise {}",
            clean.len(),
            noise.len()
        )));
    }
    if 2 * config.hop != config.frame_len {
        return Err(MetricsError::InvalidConfig("component filtering needs 50% overlap".into()));
    }
    let expected = config.frame_count(clean.len());
    if masks.frames != expected {
        return Err(MetricsError::FrameCountMismatch {
            expected,
            found: masks.frames,
        });
    }
    if masks.bins != config.bins() {
        return Err(MetricsError::LengthMismatch(format!(
            "mask trace has {} bins, spectrum {}",
            masks.bins,
            config.bins()
        )));
    }
    Ok(ComponentPair {
        s_tilde: filter_one(clean, masks, config)?,
        d_tilde: filter_one(noise, masks, config)?,
    })
}

fn frame_ranges(len: usize, frame_len: usize, hop: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let frames = if len <= frame_len { 1 } else { 1 + (len - frame_len).div_ceil(hop) };
    (0..frames).map(move |l| l * hop..(l * hop + frame_len).min(len))
}

/// Segmental speech-to-speech-distortion ratio in dB over speech-active
/// frames, each frame ratio clipped to `[r_min, r_max]`.
pub fn ssdr(clean: &[f64], s_tilde: &[f64], config: &SsdrConfig) -> Result<f64, MetricsError> {
    config.validate()?;
    if clean.len() != s_tilde.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "clean has {} samples, filtered speech {}",
            clean.len(),
            s_tilde.len()
        )));
    }
    let frames: Vec<_> = frame_ranges(clean.len(), config.frame_len, config.hop).collect();
    let energy: Vec<f64> = frames.iter().map(|r| clean[r.clone()].iter().map(|v| v * v).sum()).collect();
    let max = energy.iter().copied().fold(0.0, f64::max);
    if !(max > config.energy_floor) {
        return Err(MetricsError::NoActiveFrames);
    }
    let gate = 10.0 * max.log10() - config.vad_threshold_db;

    let mut total = 0.0;
    let mut count = 0usize;
    for (range, &e) in frames.iter().zip(&energy) {
        if !(e > config.energy_floor) || 10.0 * e.log10() < gate {
            continue;
        }
        let err: f64 = clean[range.clone()]
            .iter()
            .zip(&s_tilde[range.clone()])
            .map(|(s, t)| (t - s) * (t - s))
            .sum();
        let ratio = 10.0 * (e / err).log10();
        total += ratio.clamp(config.r_min, config.r_max);
        count += 1;
    }
    Ok(total / count as f64)
}

/// `10·log10(Σ s̃² / Σ d̃²) - snr_in_db`.
pub fn delta_snr(pair: &ComponentPair, snr_in_db: f64) -> Result<f64, MetricsError> {
    if pair.s_tilde.len() != pair.d_tilde.len() {
        return Err(MetricsError::LengthMismatch("component lengths differ".into()));
    }
    let speech: f64 = pair.s_tilde.iter().map(|v| v * v).sum();
    let noise: f64 = pair.d_tilde.iter().map(|v| v * v).sum();
    if noise == 0.0 {
        return Err(MetricsError::ZeroNoiseComponent);
    }
    Ok(10.0 * (speech / noise).log10() - snr_in_db)
}

/// ΔSNR and SSDR of one utterance.
pub fn evaluate(
    clean: &[f64],
    noise: &[f64],
    masks: &MaskTrace,
    snr_in_db: f64,
    stft_config: &StftConfig,
    ssdr_config: &SsdrConfig,
) -> Result<(f64, f64), MetricsError> {
    let pair = filter_components(clean, noise, masks, stft_config)?;
    Ok((delta_snr(&pair, snr_in_db)?, ssdr(clean, &pair.s_tilde, ssdr_config)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub condition: String,
    pub snr_in_db: f64,
    pub delta_snr_db: f64,
    pub ssdr_db: f64,
}

/// Means per (condition, SNR) and per condition averaged over its SNRs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub per_snr: Vec<ReportRow>,
    /// `snr_in_db` holds the mean input SNR of the averaged groups.
    pub per_condition: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "condition,snr_in_db,delta_snr_db,ssdr_db";

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub fn report(rows: &[ReportRow]) -> Report {
    let mut groups: BTreeMap<(String, i64), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.condition.clone(), (r.snr_in_db * 1000.0).round() as i64);
        groups.entry(key).or_default().push(r);
    }
    let per_snr: Vec<ReportRow> = groups
        .values()
        .map(|g| ReportRow {
            condition: g[0].condition.clone(),
            snr_in_db: g[0].snr_in_db,
            delta_snr_db: mean(g.iter().map(|r| r.delta_snr_db)),
            ssdr_db: mean(g.iter().map(|r| r.ssdr_db)),
        })
        .collect();
    let mut by_condition: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for r in &per_snr {
        by_condition.entry(&r.condition).or_default().push(r);
    }
    let per_condition = by_condition
        .into_iter()
        .map(|(c, g)| ReportRow {
            condition: c.to_string(),
            snr_in_db: mean(g.iter().map(|r| r.snr_in_db)),
            delta_snr_db: mean(g.iter().map(|r| r.delta_snr_db)),
            ssdr_db: mean(g.iter().map(|r| r.ssdr_db)),
        })
        .collect();
    Report { per_snr, per_condition }
}

pub fn rows_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.condition, r.snr_in_db, r.delta_snr_db, r.ssdr_db).unwrap();
    }
    out
}

impl Report {
    /// Per-SNR means followed by one `avg` row per condition.
    pub fn to_csv(&self) -> String {
        let mut out = rows_csv(&self.per_snr);
        for r in &self.per_condition {
            writeln!(out, "{},avg,{},{}", r.condition, r.delta_snr_db, r.ssdr_db).unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>8} {:>12} {:>10}\n", "condition", "SNR_in", "ΔSNR [dB]", "SSDR [dB]");
        for r in &self.per_snr {
            writeln!(
                out,
                "{:<16} {:>8.1} {:>12.2} {:>10.2}",
                r.condition, r.snr_in_db, r.delta_snr_db, r.ssdr_db
            )
            .unwrap();
        }
        for r in &self.per_condition {
            writeln!(out, "{:<16} {:>8} {:>12.2} {:>10.2}", r.condition, "avg", r.delta_snr_db, r.ssdr_db).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
    }

    /// Direct evaluation over explicit frame start positions.
    fn naive_ssdr(s: &[f64], t: &[f64]) -> f64 {
        let mut starts = vec![0usize];
        while starts.last().unwrap() + 256 < s.len() {
            starts.push(starts.last().unwrap() + 128);
        }
        let energies: Vec<f64> = starts
            .iter()
            .map(|&a| (a..(a + 256).min(s.len())).map(|n| s[n].powi(2)).sum())
            .collect();
        let emax = energies.iter().cloned().fold(f64::MIN, f64::max);
        let mut vals = Vec::new();
        for (&a, &e) in starts.iter().zip(&energies) {
            if e <= 1e-10 || 10.0 * e.log10() < 10.0 * emax.log10() - 40.0 {
                continue;
            }
            let mut den = 0.0;
            for n in a..(a + 256).min(s.len()) {
                den += (t[n] - s[n]).powi(2);
            }
            vals.push((10.0 * (e / den).log10()).clamp(-10.0, 30.0));
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssdr_fixed_points() {
        let c = random(4000, 1, 0.5);
        let cfg = SsdrConfig::default();
        assert_eq!(ssdr(&c, &c, &cfg).unwrap(), 30.0);
        assert_eq!(ssdr(&c, &vec![0.0; c.len()], &cfg).unwrap(), 0.0);
        let doubled: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        assert_eq!(ssdr(&c, &doubled, &cfg).unwrap(), 0.0);
        assert!(matches!(ssdr(&[0.0; 500], &[0.0; 500], &cfg), Err(MetricsError::NoActiveFrames)));
    }

    #[test]
    fn vad_skips_quiet_frames() {
        // a loud first half and a -60 dB second half; distortion only in the quiet half
        let mut c = random(4096, 2, 0.5);
        for v in &mut c[2048..] {
            *v *= 1e-3;
        }
        let mut t = c.clone();
        for v in &mut t[2304..] {
            *v = 0.0;
        }
        assert_eq!(ssdr(&c, &t, &SsdrConfig::default()).unwrap(), 30.0);
    }

    #[test]
    fn unit_mask_components() {
        let cfg = StftConfig::default();
        let clean = random(6000, 3, 0.4);
        let noise = random(6000, 4, 0.1);
        let frames = cfg.frame_count(6000);
        let pair = filter_components(&clean, &noise, &MaskTrace::constant(frames, 129, 1.0), &cfg).unwrap();
        // the padded framing reconstructs the edges too
        for i in 0..6000 {
            assert!((pair.s_tilde[i] - clean[i]).abs() < 1e-10);
        }
        let zero = filter_components(&clean, &noise, &MaskTrace::constant(frames, 129, 0.0), &cfg).unwrap();
        assert!(zero.s_tilde.iter().chain(&zero.d_tilde).all(|&v| v == 0.0));
        assert!(matches!(delta_snr(&zero, 0.0), Err(MetricsError::ZeroNoiseComponent)));

        let doubled: Vec<f64> = clean.iter().map(|v| 2.0 * v).collect();
        let masks = MaskTrace {
            frames,
            bins: 129,
            values: random(frames * 129, 5, 1.0).iter().map(|v| v.abs()).collect(),
        };
        let a = filter_components(&clean, &noise, &masks, &cfg).unwrap();
        let b = filter_components(&doubled, &noise, &masks, &cfg).unwrap();
        for (x, y) in a.s_tilde.iter().zip(&b.s_tilde) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(matches!(
            filter_components(&clean, &noise, &MaskTrace::constant(frames - 1, 129, 1.0), &cfg),
            Err(MetricsError::FrameCountMismatch { .. })
        ));
    }

    #[test]
    fn hand_built_mask_gives_six_db() {
        // speech in bins ≤ 40, noise in bins ≥ 80: halving the noise bins
        // quarters the noise energy and leaves the speech untouched
        let cfg = StftConfig::default();
        let n = 16000;
        let tone = |bin: f64, amp: f64| -> Vec<f64> {
            (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * bin * i as f64 / 256.0).sin()).collect()
        };
        let clean = tone(16.0, 0.5);
        let noise = tone(100.0, 0.1);
        let frames = cfg.frame_count(n);
        let mut masks = MaskTrace::constant(frames, 129, 1.0);
        for l in 0..frames {
            for k in 60..129 {
                masks.values[l * 129 + k] = 0.5;
            }
        }
        let pair = filter_components(&clean, &noise, &masks, &cfg).unwrap();
        let snr_in = 10.0 * (clean.iter().map(|v| v * v).sum::<f64>() / noise.iter().map(|v| v * v).sum::<f64>()).log10();
        let d = delta_snr(&pair, snr_in).unwrap();
        assert!((d - 10.0 * 4f64.log10()).abs() < 0.01, "{d}");
    }

    #[test]
    fn report_aggregation() {
        let row = |c: &str, snr: f64, d: f64, s: f64| ReportRow {
            condition: c.into(),
            snr_in_db: snr,
            delta_snr_db: d,
            ssdr_db: s,
        };
        let single = report(&[row("cafe", 0.0, 3.0, 10.0)]);
        assert_eq!(single.per_snr.len(), 1);
        let two = report(&[row("cafe", 0.0, 3.0, 10.0), row("cafe", 0.0, 5.0, 12.0)]);
        assert_eq!(two.per_snr[0].delta_snr_db, 4.0);
        assert_eq!(two.per_snr[0].ssdr_db, 11.0);

        let six: Vec<ReportRow> = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| row("bus", s, i as f64, 2.0 * i as f64))
            .collect();
        let r = report(&six);
        assert_eq!(r.per_snr.len(), 6);
        assert_eq!(r.per_condition.len(), 1);
        assert_eq!(r.per_condition[0].delta_snr_db, 2.5);
        assert_eq!(r.per_condition[0].ssdr_db, 5.0);
        assert!(r.to_csv().starts_with(REPORT_HEADER));
        assert!(r.to_csv().ends_with("bus,avg,2.5,5\n"));
    }

    proptest! {
        #[test]
        fn ssdr_matches_naive_oracle(seed in any::<u64>(), len in 300usize..3000, noise in 0.0f64..1.0) {
            let c = random(len, seed, 1.0);
            let t: Vec<f64> = c.iter().zip(random(len, seed ^ 1, noise)).map(|(a, b)| a + b).collect();
            let got = ssdr(&c, &t, &SsdrConfig::default()).unwrap();
            prop_assert!((got - naive_ssdr(&c, &t)).abs() <= 1e-10);
            prop_assert!((-10.0..=30.0).contains(&got));
        }

        #[test]
        fn unit_mask_delta_snr_is_zero(seed in any::<u64>(), snr in -5.0f64..20.0) {
            let cfg = StftConfig::default();
            let clean = crate::audio::Utterance::new(random(4000, seed, 0.5), crate::audio::Role::Clean);
            let noise = crate::audio::Utterance::new(random(4000, seed ^ 7, 0.5), crate::audio::Role::Noise);
            let (_, scaled) = crate::audio::mix_at_snr(&clean, &noise, snr, 0).unwrap();
            let masks = MaskTrace::constant(cfg.frame_count(4000), 129, 1.0);
            let pair = filter_components(&clean.samples, &scaled.samples, &masks, &cfg).unwrap();
            prop_assert!(delta_snr(&pair, snr).unwrap().abs() <= 0.01);
        }
    }
}
