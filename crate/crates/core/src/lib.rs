//! Speech enhancement with a spectral-mask feedforward network trained under a
//! CELP perceptual weighting filter loss.
//!
//! The crate is organized bottom-up:
//!
//! - [`audio`]: 16 kHz mono PCM WAV I/O and mixing at an exact SNR.
//! - [`dsp`]: radix-2 FFT, periodic-Hann STFT and overlap-add resynthesis.
//! - [`percept`]: LP analysis, AMR / AMR-WB weighting filter responses and the
//!   weighted spectral loss with its gradient.
//! - [`neural`]: the dense masking network (forward, backward, Adam, model files).
//! - [`pipeline`]: feature extraction, normalization, training, enhancement and
//!   the weighting-factor sweep.
//! - [`metrics`]: component filtering, SSDR, ΔSNR and report tables.
//! - [`cli`]: the `wfenhance` command line front end.
//!
//! [`synth`] generates speech-like test material for demos and tests.

// NaN-rejecting `!(x > 0.0)` checks and index loops over coupled arrays are intended
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::manual_is_multiple_of)]

pub mod audio;
pub mod cli;
pub mod dsp;
pub mod metrics;
pub mod neural;
pub mod percept;
pub mod pipeline;
pub mod synth;

mod checksum;

use thiserror::Error;

/// Crate-wide error, wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Percept(#[from] percept::PerceptError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
