use std::fmt::Write as _;

use super::dataset::{Dataset, LossWeighting, Mixture};
use super::enhance::predict_masks;
use super::stats::FeatureStats;
use super::train::{train, LogRow, TrainConfig};
use super::PipelineError;
use crate::dsp::{stft, StftConfig};
use crate::metrics::{evaluate, SsdrConfig};
use crate::neural::{Model, Real, Topology};
use crate::percept::WeightConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Every field except `gamma1` is kept for all rows.
    pub weight: WeightConfig,
    pub topology: Topology,
    pub train: TrainConfig,
    pub stft: StftConfig,
    pub ssdr: SsdrConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma1: f64,
    pub gamma2: f64,
    pub val_loss: f64,
    pub delta_snr_db: f64,
    pub ssdr_db: f64,
    pub log: Vec<LogRow>,
}

/// Mean ΔSNR and SSDR of a model over validation mixtures.
pub fn validation_metrics<T: Real>(
    model: &Model<T>,
    stats: &FeatureStats,
    mixtures: &[Mixture],
    stft_config: &StftConfig,
    ssdr_config: &SsdrConfig,
) -> Result<(f64, f64), PipelineError> {
    let mut delta = 0.0;
    let mut ssdr = 0.0;
    for m in mixtures {
        let mags: Vec<Vec<f64>> = stft(&m.mixture, stft_config)?.iter().map(|f| f.magnitude()).collect();
        let masks = predict_masks(model, stats, &mags)?;
        let (d, s) = evaluate(&m.clean, &m.noise, &masks, m.snr_db, stft_config, ssdr_config)?;
        delta += d;
        ssdr += s;
    }
    let n = mixtures.len() as f64;
    Ok((delta / n, ssdr / n))
}

/// Trains one model per `gamma1` and returns the rows ranked by mean
/// validation ΔSNR, best first.
///
/// Validation losses are reported but not ranked on: each row's loss is
/// measured under its own weighting, so values are not comparable across rows.
pub fn sweep_gamma<T: Real>(
    train_mixtures: &[Mixture],
    val_mixtures: &[Mixture],
    gamma1s: &[f64],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>, PipelineError> {
    if gamma1s.is_empty() {
        return Err(PipelineError::InvalidConfig("empty gamma1 list".into()));
    }
    if val_mixtures.is_empty() {
        return Err(PipelineError::EmptySplit("validation"));
    }
    let mut stats = None;
    let mut rows = Vec::with_capacity(gamma1s.len());
    for &gamma1 in gamma1s {
        let weighting = LossWeighting::Filter(WeightConfig { gamma1, ..config.weight });
        let train_set = Dataset::from_mixtures(train_mixtures, weighting, &config.stft)?;
        let val_set = Dataset::from_mixtures(val_mixtures, weighting, &config.stft)?;
        // inputs do not depend on the weighting, so one fit serves every row
        let stats = match &stats {
            Some(s) => s,
            None => stats.insert(FeatureStats::fit(&train_set)?),
        };
        let train_config = TrainConfig {
            weighting,
            ..config.train.clone()
        };
        let outcome = train::<T>(&train_set, Some(&val_set), stats, config.topology.clone(), &train_config)?;
        let (delta_snr_db, ssdr_db) =
            validation_metrics(&outcome.model, stats, val_mixtures, &config.stft, &config.ssdr)?;
        rows.push(SweepRow {
            gamma1,
            gamma2: config.weight.gamma2,
            val_loss: outcome.log.last().and_then(|r| r.val_loss).unwrap_or(f64::NAN),
            delta_snr_db,
            ssdr_db,
            log: outcome.log,
        });
    }
    // stable: ties keep the input order
    rows.sort_by(|a, b| b.delta_snr_db.total_cmp(&a.delta_snr_db));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rank,gamma1,gamma2,val_loss,delta_snr_db,ssdr_db\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            r.gamma1,
            r.gamma2,
            r.val_loss,
            r.delta_snr_db,
            r.ssdr_db
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::manifest::Split;
    use crate::synth;

    fn mixtures() -> (Vec<Mixture>, Vec<Mixture>) {
        let make = |i: u64, split| {
            let clean = synth::speech_like(6000, 40 + i);
            let noise = synth::white_noise(6000, 80 + i);
            Mixture::mix(&clean, &noise, 5.0, 0, split, "white").unwrap()
        };
        (vec![make(0, Split::Train), make(1, Split::Train)], vec![make(2, Split::Val)])
    }

    fn config() -> SweepConfig {
        SweepConfig {
            weight: WeightConfig::amr(0.92, 0.6),
            topology: Topology::new(645, vec![32, 16], 129),
            train: TrainConfig {
                max_steps: 20,
                eval_every: 10,
                batch_size: 8,
                ..TrainConfig::default()
            },
            stft: StftConfig::default(),
            ssdr: SsdrConfig::default(),
        }
    }

    #[test]
    fn one_row_per_gamma() {
        let (tr, va) = mixtures();
        let rows = sweep_gamma::<f32>(&tr, &va, &[0.92], &config()).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = sweep_gamma::<f32>(&tr, &va, &[1.0, 0.92], &config()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.val_loss.is_finite() && r.delta_snr_db.is_finite()));
        assert!(rows[0].delta_snr_db >= rows[1].delta_snr_db);
        assert_eq!(sweep_csv(&rows).lines().count(), 3);
        assert!(sweep_gamma::<f32>(&tr, &va, &[], &config()).is_err());
    }

    #[test]
    fn equal_gammas_match_unit_weights() {
        let (tr, va) = mixtures();
        let rows = sweep_gamma::<f32>(&tr, &va, &[0.6], &config()).unwrap();
        let cfg = config();
        let ones = LossWeighting::Ones;
        let train_set = Dataset::from_mixtures(&tr, ones, &cfg.stft).unwrap();
        let val_set = Dataset::from_mixtures(&va, ones, &cfg.stft).unwrap();
        let stats = FeatureStats::fit(&train_set).unwrap();
        let tc = TrainConfig {
            weighting: ones,
            ..cfg.train.clone()
        };
        let reference = train::<f32>(&train_set, Some(&val_set), &stats, cfg.topology.clone(), &tc).unwrap();
        assert_eq!(rows[0].log, reference.log);
    }
}
