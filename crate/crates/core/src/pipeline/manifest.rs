//! Manifest CSV (`clean,noise,snr_db,split,seed`) and mixture loading.
//!
//! After `mix`, manifests may carry two extra columns, `mixture` and
//! `noise_offset`. Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Mixture;
use super::PipelineError;
use crate::audio::{load_wav, Role};

/// The default SNR grid in dB.
pub const SNR_GRID: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(PipelineError::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub split: Split,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_offset: Option<usize>,
}

impl ManifestRow {
    /// Noise condition label: the noise file's stem.
    pub fn condition(&self) -> String {
        self.noise
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// How noise segments are chosen when mixing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MixOptions {
    /// Draw the noise start from the row seed instead of starting at 0.
    pub random_offset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| PipelineError::Manifest(e.to_string()))?.clone();
        for required in ["clean", "noise", "snr_db", "split", "seed"] {
            if !header.iter().any(|h| h == required) {
                return Err(PipelineError::Manifest(format!("missing column '{required}'")));
            }
        }
        let rows = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| PipelineError::Manifest(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<ManifestRow>, _>>()?;
        let manifest = Self {
            rows,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(super::io_failure(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_csv(&self) -> Result<String, PipelineError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let extended = self.rows.iter().any(|r| r.mixture.is_some() || r.noise_offset.is_some());
        if extended {
            writer
                .write_record(["clean", "noise", "snr_db", "split", "seed", "mixture", "noise_offset"])
                .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        } else {
            writer
                .write_record(["clean", "noise", "snr_db", "split", "seed"])
                .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        }
        for r in &self.rows {
            let mut rec = vec![
                r.clean.display().to_string(),
                r.noise.display().to_string(),
                r.snr_db.to_string(),
                r.split.to_string(),
                r.seed.to_string(),
            ];
            if extended {
                rec.push(r.mixture.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
                rec.push(r.noise_offset.map(|o| o.to_string()).unwrap_or_default());
            }
            writer.write_record(&rec).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| PipelineError::Manifest(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (i, r) in self.rows.iter().enumerate() {
            if !r.snr_db.is_finite() {
                return Err(PipelineError::Manifest(format!("row {}: SNR must be finite", i + 1)));
            }
        }
        Ok(())
    }

    /// Rejects rows whose SNR is not on `grid`.
    pub fn check_grid(&self, grid: &[f64]) -> Result<(), PipelineError> {
        for (i, r) in self.rows.iter().enumerate() {
            if !grid.iter().any(|&g| (g - r.snr_db).abs() < 1e-9) {
                return Err(PipelineError::Manifest(format!(
                    "row {}: SNR {} dB is not on the grid {grid:?}",
                    i + 1,
                    r.snr_db
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Reassigns train/val labels so that every (noise, SNR) group is split
    /// as close to `val_fraction` as rounding allows. Test rows are kept.
    pub fn assign_splits(&mut self, val_fraction: f64, seed: u64) -> Result<(), PipelineError> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(PipelineError::InvalidConfig(format!(
                "validation fraction {val_fraction} outside [0, 1)"
            )));
        }
        let mut groups: BTreeMap<(String, i64), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.split != Split::Test {
                let key = (r.noise.display().to_string(), (r.snr_db * 1000.0).round() as i64);
                groups.entry(key).or_default().push(i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for members in groups.values_mut() {
            members.shuffle(&mut rng);
            let n_val = (members.len() as f64 * val_fraction).round() as usize;
            for (j, &i) in members.iter().enumerate() {
                self.rows[i].split = if j < n_val { Split::Val } else { Split::Train };
            }
        }
        Ok(())
    }

    /// Noise start offset for a row: the stored column, else 0 or a position
    /// drawn from the row seed.
    pub fn noise_offset(row: &ManifestRow, clean_len: usize, noise_len: usize, options: MixOptions) -> usize {
        if let Some(o) = row.noise_offset {
            return o;
        }
        if !options.random_offset || noise_len <= clean_len {
            return 0;
        }
        ChaCha8Rng::seed_from_u64(row.seed).gen_range(0..=noise_len - clean_len)
    }

    /// Loads and mixes one row.
    pub fn mix_row(&self, row: &ManifestRow, options: MixOptions) -> Result<Mixture, PipelineError> {
        let clean = load_wav(self.resolve(&row.clean), Role::Clean)?;
        let noise = load_wav(self.resolve(&row.noise), Role::Noise)?;
        let offset = Self::noise_offset(row, clean.len(), noise.len(), options);
        Mixture::mix(&clean, &noise, row.snr_db, offset, row.split, row.condition())
    }

    /// Mixtures of every row in `split`, in manifest order.
    pub fn mixtures(&self, split: Split, options: MixOptions) -> Result<Vec<Mixture>, PipelineError> {
        use rayon::prelude::*;
        let rows: Vec<&ManifestRow> = self.rows_in(split).collect();
        rows.par_iter().map(|r| self.mix_row(r, options)).collect()
    }
}
