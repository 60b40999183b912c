//! Flat `section.key = value` run configuration.
//!
//! Sources are applied in order: built-in defaults, then `--config FILE`,
//! then `--set key=value` and the dedicated flags. Blank lines and lines
//! starting with `#` are ignored. Every value is validated before any
//! subcommand runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::dsp::StftConfig;
use crate::metrics::SsdrConfig;
use crate::neural::{AdamConfig, Topology};
use crate::percept::WeightConfig;
use crate::pipeline::{LossWeighting, MixOptions, TrainConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Every key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "1"),
    ("threads", "1"),
    ("weight.variant", "amr"),
    ("weight.gamma1", "0.92"),
    ("weight.gamma2", "0.6"),
    ("weight.beta", "0.68"),
    ("weight.order", "16"),
    ("model.hidden", "1024,512,512,512,256"),
    ("model.residual", "false,false,true,true,false"),
    ("model.leaky_slope", "0.01"),
    ("model.dropout", "0.2"),
    ("model.bn_epsilon", "1e-5"),
    ("model.bn_momentum", "0.99"),
    ("train.lr", "5e-4"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("train.batch_size", "128"),
    ("train.max_steps", "2000"),
    ("train.eval_every", "100"),
    ("ssdr.r_min", "-10"),
    ("ssdr.r_max", "30"),
    ("ssdr.vad_threshold_db", "40"),
    ("ssdr.energy_floor", "1e-10"),
    ("mix.random_offset", "false"),
    ("mix.val_fraction", ""),
    ("mix.snr_grid", "-5,0,5,10,15,20"),
    ("sweep.gamma1", "1,0.98,0.96,0.94,0.92,0.9,0.88,0.86,0.84,0.82,0.8,0.78,0.76,0.74,0.72,0.7"),
];

/// Raw key/value settings after merging all sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Default for Settings {
    fn default() -> Self {
        Self(DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.0.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => err(format!("unknown configuration key '{key}'")),
        }
    }

    /// Applies `key=value` assignments from config-file text.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| ConfigError(format!("line {}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment from the command line.
    pub fn merge_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set expects key=value, got '{assignment}'")))?;
        self.set(k.trim(), v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("key has a default")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| ConfigError(format!("{key}: cannot parse '{raw}'")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| ConfigError(format!("{key}: cannot parse '{}'", s.trim())))
            })
            .collect()
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let seed: u64 = self.parse("seed")?;
        let threads: usize = self.parse("threads")?;
        if threads == 0 {
            return err("threads must be at least 1");
        }

        let gamma1: f64 = self.parse("weight.gamma1")?;
        let gamma2: f64 = self.parse("weight.gamma2")?;
        let beta: f64 = self.parse("weight.beta")?;
        let order: usize = self.parse("weight.order")?;
        let filter = |mut w: WeightConfig| {
            w.order = order;
            w
        };
        let weighting = match self.raw("weight.variant") {
            "amr" => LossWeighting::Filter(filter(WeightConfig::amr(gamma1, gamma2))),
            "amr_wb" => LossWeighting::Filter(filter(WeightConfig::amr_wb(gamma1, beta))),
            "mse" => LossWeighting::Mse,
            "ones" => LossWeighting::Ones,
            other => return err(format!("weight.variant: expected amr, amr_wb, mse or ones, got '{other}'")),
        };
        let weight = match weighting {
            LossWeighting::Filter(w) => w,
            _ => filter(WeightConfig::amr(gamma1, gamma2)),
        };
        if let LossWeighting::Filter(w) = &weighting {
            w.validate().map_err(|e| ConfigError(e.to_string()))?;
        }

        let topology = Topology {
            input_dim: 645,
            hidden: self.list("model.hidden")?,
            residual: self.list("model.residual")?,
            output_dim: 129,
            leaky_slope: self.parse("model.leaky_slope")?,
            dropout_rate: self.parse("model.dropout")?,
            bn_epsilon: self.parse("model.bn_epsilon")?,
            bn_momentum: self.parse("model.bn_momentum")?,
        };
        topology.validate().map_err(|e| ConfigError(e.to_string()))?;

        let train = TrainConfig {
            adam: AdamConfig {
                lr: self.parse("train.lr")?,
                beta1: self.parse("train.beta1")?,
                beta2: self.parse("train.beta2")?,
                eps: self.parse("train.eps")?,
            },
            batch_size: self.parse("train.batch_size")?,
            max_steps: self.parse("train.max_steps")?,
            eval_every: self.parse("train.eval_every")?,
            weighting,
            seed,
        };
        train.validate().map_err(|e| ConfigError(e.to_string()))?;

        let ssdr = SsdrConfig {
            r_min: self.parse("ssdr.r_min")?,
            r_max: self.parse("ssdr.r_max")?,
            vad_threshold_db: self.parse("ssdr.vad_threshold_db")?,
            energy_floor: self.parse("ssdr.energy_floor")?,
            ..SsdrConfig::default()
        };
        ssdr.validate().map_err(|e| ConfigError(e.to_string()))?;

        let val_fraction = match self.raw("mix.val_fraction") {
            "" => None,
            _ => {
                let f: f64 = self.parse("mix.val_fraction")?;
                if !(0.0..1.0).contains(&f) {
                    return err(format!("mix.val_fraction {f} outside [0, 1)"));
                }
                Some(f)
            }
        };
        let snr_grid: Vec<f64> = self.list("mix.snr_grid")?;
        let sweep_gamma1: Vec<f64> = self.list("sweep.gamma1")?;
        if sweep_gamma1.is_empty() {
            return err("sweep.gamma1 must list at least one value");
        }
        for &g in &sweep_gamma1 {
            WeightConfig { gamma1: g, ..weight }
                .validate()
                .map_err(|e| ConfigError(format!("sweep.gamma1: {e}")))?;
        }

        Ok(RunConfig {
            seed,
            threads,
            weight,
            topology,
            train,
            ssdr,
            stft: StftConfig::default(),
            mix: MixOptions {
                random_offset: self.parse("mix.random_offset")?,
            },
            val_fraction,
            snr_grid,
            sweep_gamma1,
        })
    }
}

/// Validated settings for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    /// Filter parameters; also the base of a sweep when training is unweighted.
    pub weight: WeightConfig,
    pub topology: Topology,
    pub train: TrainConfig,
    pub ssdr: SsdrConfig,
    pub stft: StftConfig,
    pub mix: MixOptions,
    pub val_fraction: Option<f64>,
    /// Empty accepts any SNR.
    pub snr_grid: Vec<f64>,
    pub sweep_gamma1: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Settings::default().resolve().expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::manifest::SNR_GRID;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::default();
        assert_eq!(c.topology, Topology::default());
        assert_eq!(c.train.adam, AdamConfig::default());
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.weight, WeightConfig::amr(0.92, 0.6));
        assert_eq!(c.snr_grid, SNR_GRID.to_vec());
        assert_eq!(c.sweep_gamma1.len(), 16);
        assert_eq!(c.threads, 1);
    }

    #[test]
    fn precedence_and_comments() {
        let mut s = Settings::default();
        s.merge_text("# comment\n\ntrain.lr = 1e-3\nseed=5\n").unwrap();
        s.merge_assignment("seed=9").unwrap();
        let c = s.resolve().unwrap();
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.seed, 9);
        let round = {
            let mut t = Settings::default();
            t.merge_text(&s.to_text()).unwrap();
            t
        };
        assert_eq!(round, s);
    }

    #[test]
    fn rejects_invalid_values() {
        for bad in [
            "nope=1",
            "train.lr=-1",
            "train.batch_size=0",
            "weight.gamma1=1.5",
            "weight.variant=celp",
            "model.residual=true,false,true,true,false",
            "model.dropout=1",
            "ssdr.r_min=40",
            "mix.val_fraction=1.5",
            "threads=0",
            "sweep.gamma1=",
        ] {
            let mut s = Settings::default();
            let r = s.merge_assignment(bad).and_then(|_| s.resolve().map(|_| ()));
            assert!(r.is_err(), "{bad} accepted");
        }
        assert!(Settings::default().merge_text("train.lr 1").is_err());
    }

    #[test]
    fn variants() {
        let mut s = Settings::default();
        s.merge_assignment("weight.variant=mse").unwrap();
        assert_eq!(s.resolve().unwrap().train.weighting, LossWeighting::Mse);
        s.merge_assignment("weight.variant=amr_wb").unwrap();
        match s.resolve().unwrap().train.weighting {
            LossWeighting::Filter(w) => assert_eq!(w.beta, 0.68),
            other => panic!("{other:?}"),
        }
    }
}
