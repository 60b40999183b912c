//! WAV ingestion/emission and noisy mixture construction.
//!
//! Only one container layout is accepted: RIFF/WAVE with a PCM (`tag 1`)
//! `fmt ` chunk, 16-bit little-endian samples, one channel, 16 kHz. Unknown
//! chunks before `data` are skipped.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// The only sample rate the toolkit works at.
pub const SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;
const PCM_MAX: f64 = 32767.0 / 32768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("i/o failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("clean signal has zero power")]
    ZeroPowerClean,
    #[error("noise segment has zero power")]
    ZeroPowerNoise,
    #[error("noise segment too short: {needed} samples needed from offset {offset}, {available} available")]
    NoiseTooShort {
        needed: usize,
        offset: usize,
        available: usize,
    },
    #[error("SNR must be finite, got {0}")]
    InvalidSnr(f64),
    #[error("samples must be finite")]
    NonFiniteSample,
}

/// What an utterance represents in the `y(n) = s(n) + d(n)` signal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Clean,
    Noise,
    Mixture,
    Enhanced,
}

/// A mono sample sequence in `[-1, 1]` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub role: Role,
}

impl Utterance {
    pub fn new(samples: Vec<f64>, role: Role) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean square over the whole utterance.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

/// What to mix: a clean file, a noise file, the target SNR and where in the
/// noise file the segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub noise_offset: usize,
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_signal / P_noise)` with P the full-utterance mean square.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AudioError + '_ {
    move |source| AudioError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn load_wav(path: impl AsRef<Path>, role: Role) -> Result<Utterance, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes, role)
}

/// Parses an in-memory WAV image.
pub fn decode_wav(bytes: &[u8], role: Role) -> Result<Utterance, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::CorruptHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::CorruptHeader("missing RIFF/WAVE signature".into()));
    }

    let mut pos = 12;
    let mut format_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                AudioError::CorruptHeader(format!(
                    "chunk {:?} claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];

        match id {
            b"fmt " => {
                check_format(body)?;
                format_seen = true;
            }
            b"data" => {
                if !format_seen {
                    return Err(AudioError::CorruptHeader("data chunk before fmt chunk".into()));
                }
                if size % 2 != 0 {
                    return Err(AudioError::CorruptHeader("odd-length 16-bit data chunk".into()));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|p| i16::from_le_bytes([p[0], p[1]]) as f64 / PCM_SCALE)
                    .collect();
                return Ok(Utterance::new(samples, role));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(AudioError::CorruptHeader("no data chunk".into()))
}

fn check_format(fmt: &[u8]) -> Result<(), AudioError> {
    if fmt.len() < 16 {
        return Err(AudioError::CorruptHeader("fmt chunk shorter than 16 bytes".into()));
    }
    let tag = le_u16(&fmt[0..2]);
    let channels = le_u16(&fmt[2..4]);
    let rate = le_u32(&fmt[4..8]);
    let bits = le_u16(&fmt[14..16]);
    if tag != 1 {
        return Err(AudioError::UnsupportedFormat(format!("format tag {tag}, expected PCM (1)")));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!("{channels} channels, expected mono")));
    }
    if rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat(format!("{rate} Hz, expected {SAMPLE_RATE} Hz")));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!("{bits}-bit samples, expected 16-bit")));
    }
    Ok(())
}

/// Quantizes one sample to PCM16, clipping to `[-1, 32767/32768]` first.
pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, PCM_MAX) * PCM_SCALE).round() as i16
}

/// Builds the WAV image for `samples` at 16 kHz mono PCM16.
pub fn encode_wav(samples: &[f64]) -> Result<Vec<u8>, AudioError> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AudioError::NonFiniteSample);
    }
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in samples {
        out.extend_from_slice(&quantize(x).to_le_bytes());
    }
    Ok(out)
}

pub fn save_wav(utterance: &Utterance, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let bytes = encode_wav(&utterance.samples)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Scales the noise segment starting at `offset` so that the clean-to-noise
/// power ratio equals `snr_db`, and returns `(mixture, scaled_noise)`.
///
/// The returned noise is `mixture - clean` evaluated sample by sample, so the
/// decomposition `mixture == clean + noise` holds exactly for the component
/// metrics downstream.
pub fn mix_at_snr(
    clean: &Utterance,
    noise: &Utterance,
    snr_db: f64,
    offset: usize,
) -> Result<(Utterance, Utterance), AudioError> {
    if !snr_db.is_finite() {
        return Err(AudioError::InvalidSnr(snr_db));
    }
    let n = clean.len();
    let available = noise.len().saturating_sub(offset);
    if available < n {
        return Err(AudioError::NoiseTooShort {
            needed: n,
            offset,
            available,
        });
    }
    let clean_power = clean.power();
    if clean_power <= 0.0 {
        return Err(AudioError::ZeroPowerClean);
    }
    let segment = &noise.samples[offset..offset + n];
    let noise_power = mean_square(segment);
    if noise_power <= 0.0 {
        return Err(AudioError::ZeroPowerNoise);
    }
    let gain = noise_gain(clean_power, noise_power, snr_db);

    let mixture: Vec<f64> = clean
        .samples
        .iter()
        .zip(segment)
        .map(|(s, d)| s + gain * d)
        .collect();
    let scaled: Vec<f64> = mixture.iter().zip(&clean.samples).map(|(y, s)| y - s).collect();
    Ok((
        Utterance::new(mixture, Role::Mixture),
        Utterance::new(scaled, Role::Noise),
    ))
}

/// Gain `g` with `10·log10(P_clean / (g²·P_noise)) == snr_db`.
pub fn noise_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}
