//! Dataset assembly, normalization statistics, the training loop, enhancement
//! and the weighting-factor sweep.

pub mod dataset;
pub mod enhance;
pub mod manifest;
pub mod stats;
pub mod sweep;
pub mod train;

pub use dataset::{extract_examples, Dataset, LossWeighting, Mixture, CONTEXT};
pub use enhance::{apply_mask, enhance, predict_masks, MaskTrace};
pub use manifest::{Manifest, ManifestRow, MixOptions, Split};
pub use stats::FeatureStats;
pub use sweep::{sweep_gamma, SweepConfig, SweepRow};
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;
use crate::dsp::DspError;
use crate::metrics::MetricsError;
use crate::neural::NeuralError;
use crate::percept::PerceptError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least 2 examples to fit statistics, got {0}")]
    TooFewExamples(usize),
    #[error("expected {expected} Hz audio, got {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("no {0} rows in the manifest")]
    EmptySplit(&'static str),
    #[error("i/o failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported file: {0}")]
    VersionMismatch(String),
    #[error("checksum mismatch or truncated file")]
    ChecksumMismatch,
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub(crate) fn io_failure(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::IoFailure { path, source }
}
