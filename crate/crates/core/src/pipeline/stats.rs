//! Input normalization statistics and their `WFS1` file.
//!
//! File layout: `"WFS1"`, the means, then the standard deviations (all f64
//! little-endian), then the u64 checksum of everything between magic and
//! checksum. The dimension follows from the file length.

use std::fs;
use std::path::Path;

use super::dataset::Dataset;
use super::{io_failure, PipelineError};
use crate::checksum::checksum64;

pub const STATS_MAGIC: &[u8; 4] = b"WFS1";
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-dimension mean and population standard deviation (floored) of
    /// `rows` vectors of width `dim` stored contiguously.
    pub fn fit_rows(data: &[f64], dim: usize) -> Result<Self, PipelineError> {
        let n = data.len().checked_div(dim).unwrap_or(0);
        if n < 2 {
            return Err(PipelineError::TooFewExamples(n));
        }
        let mut mean = vec![0.0; dim];
        let mut constant = vec![true; dim];
        for row in data.chunks_exact(dim) {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += v;
                constant[j] &= v == data[j];
            }
        }
        for (j, m) in mean.iter_mut().enumerate() {
            // an exactly constant column normalizes to exactly zero
            *m = if constant[j] { data[j] } else { *m / n as f64 };
        }
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|&v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn fit(dataset: &Dataset) -> Result<Self, PipelineError> {
        Self::fit_rows(&dataset.inputs, dataset.input_dim())
    }

    /// `(x - mean) / std` in place.
    pub fn normalize(&self, x: &mut [f64]) {
        for ((v, &m), &s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(16 * self.dim());
        for v in self.mean.iter().chain(&self.std) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let mut out = STATS_MAGIC.to_vec();
        out.extend_from_slice(&payload);
        out.extend_from_slice(&checksum64(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() < 4 || &bytes[..4] != STATS_MAGIC {
            return Err(PipelineError::VersionMismatch("not a WFS1 statistics file".into()));
        }
        if bytes.len() < 12 || (bytes.len() - 12) % 16 != 0 {
            return Err(PipelineError::ChecksumMismatch);
        }
        let (payload, tail) = bytes[4..].split_at(bytes.len() - 12);
        if checksum64(payload) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(PipelineError::ChecksumMismatch);
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let dim = values.len() / 2;
        let stats = Self {
            mean: values[..dim].to_vec(),
            std: values[dim..].to_vec(),
        };
        if stats.std.iter().any(|&s| !(s > 0.0)) {
            return Err(PipelineError::VersionMismatch("non-positive standard deviation".into()));
        }
        Ok(stats)
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
