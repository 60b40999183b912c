//! The `wfenhance` command line.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 I/O or
//! file-format error, 4 numeric failure, 5 acceptance-suite failure.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, RunConfig, Settings};

use crate::audio::{self, AudioError, Role};
use crate::dsp::{self, DspError};
use crate::metrics::{self, MetricsError, ReportRow};
use crate::neural::{self, gradcheck, NeuralError};
use crate::percept::{self, PerceptError};
use crate::pipeline::sweep::{sweep_csv, SweepConfig};
use crate::pipeline::{
    self, enhance, predict_masks, sweep_gamma, Dataset, FeatureStats, LossWeighting, Manifest, MaskTrace, Mixture,
    PipelineError, Split,
};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "wfenhance", version, about = "DNN spectral-mask speech enhancement with a perceptually weighted loss")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for dataset preparation; overrides `threads`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mix every manifest row and write the mixtures plus an updated manifest.
    Mix {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit input normalization statistics on the training rows.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training rows, validating on the validation rows.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Metrics log CSV; printed to stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Enhance one noisy WAV file.
    Enhance(EnhanceArgs),
    /// Component-filtered ΔSNR and SSDR over one manifest split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Aggregated report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-utterance CSV.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Train one model per γ1 and rank them on the validation rows.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated γ1 values; overrides `sweep.gamma1`.
        #[arg(long, value_delimiter = ',')]
        gamma1: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Envelope, noise and inverse-weighted noise spectra of one frame.
    Analyze {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Scale the noise to this SNR against the clean file first.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the network.
    Gradcheck,
    /// Print the merged configuration.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub mask_trace: Option<PathBuf>,
}

/// Why a subcommand failed, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed")]
    GradcheckFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(e) => e.exit_code(),
            CliError::Write { .. } => EXIT_IO,
            CliError::GradcheckFailed => EXIT_NUMERIC,
        }
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.into())
            }
        }
    )*};
}
from_module_error!(AudioError, DspError, PerceptError, NeuralError, PipelineError, MetricsError);

impl Error {
    /// The CLI exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Audio(e) => audio_code(e),
            Error::Dsp(_) => EXIT_CONFIG,
            Error::Percept(e) => percept_code(e),
            Error::Neural(e) => neural_code(e),
            Error::Pipeline(e) => pipeline_code(e),
            Error::Metrics(e) => metrics_code(e),
        }
    }
}

fn audio_code(e: &AudioError) -> i32 {
    match e {
        AudioError::IoFailure { .. } | AudioError::UnsupportedFormat(_) | AudioError::CorruptHeader(_) => EXIT_IO,
        AudioError::InvalidSnr(_) | AudioError::NoiseTooShort { .. } => EXIT_CONFIG,
        AudioError::ZeroPowerClean | AudioError::ZeroPowerNoise | AudioError::NonFiniteSample => EXIT_NUMERIC,
    }
}

fn percept_code(e: &PerceptError) -> i32 {
    match e {
        PerceptError::InvalidConfig(_) | PerceptError::LengthMismatch(_) | PerceptError::Dsp(_) => EXIT_CONFIG,
        PerceptError::SingularAutocorrelation { .. } | PerceptError::SilentFrame => EXIT_NUMERIC,
    }
}

fn neural_code(e: &NeuralError) -> i32 {
    match e {
        NeuralError::IoFailure(_) | NeuralError::VersionMismatch(_) | NeuralError::ChecksumMismatch => EXIT_IO,
        NeuralError::NonFiniteGradient => EXIT_NUMERIC,
        NeuralError::ShapeMismatch(_) | NeuralError::StaleCache | NeuralError::InvalidTopology(_) => EXIT_CONFIG,
    }
}

fn metrics_code(e: &MetricsError) -> i32 {
    match e {
        MetricsError::NoActiveFrames | MetricsError::ZeroNoiseComponent => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::IoFailure { .. } | PipelineError::VersionMismatch(_) | PipelineError::ChecksumMismatch => EXIT_IO,
        PipelineError::NonFiniteLoss(_) => EXIT_NUMERIC,
        PipelineError::Audio(e) => audio_code(e),
        PipelineError::Percept(e) => percept_code(e),
        PipelineError::Neural(e) => neural_code(e),
        PipelineError::Metrics(e) => metrics_code(e),
        _ => EXIT_CONFIG,
    }
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn settings(&self) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            s.merge_text(&text)?;
        }
        for a in &self.set {
            s.merge_assignment(a)?;
        }
        if let Some(seed) = self.seed {
            s.set("seed", &seed.to_string())?;
        }
        if let Some(t) = self.threads {
            s.set("threads", &t.to_string())?;
        }
        Ok(s)
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("wfenhance: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let settings = cli.settings()?;
    let config = settings.resolve()?;
    // a second initialization (tests calling run repeatedly) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global();

    match &cli.command {
        Command::Mix { manifest, out_dir } => cmd_mix(&config, manifest, out_dir),
        Command::Stats { manifest, out } => cmd_stats(&config, manifest, out),
        Command::Train {
            manifest,
            stats,
            model,
            log,
        } => cmd_train(&config, manifest, stats, model, log.as_deref()),
        Command::Enhance(args) => cmd_enhance(&config, args),
        Command::Eval {
            manifest,
            model,
            stats,
            split,
            out,
            rows,
        } => cmd_eval(&config, manifest, model, stats, split, out.as_deref(), rows.as_deref()),
        Command::Sweep { manifest, gamma1, out } => cmd_sweep(&config, manifest, gamma1, out.as_deref()),
        Command::Analyze {
            clean,
            noise,
            frame,
            snr,
            out,
        } => cmd_analyze(&config, clean, noise, *frame, *snr, out.as_deref()),
        Command::Gradcheck => cmd_gradcheck(config.seed),
        Command::ShowConfig => {
            print!("{}", settings.to_text());
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_manifest(config: &RunConfig, path: &Path) -> Result<Manifest, CliError> {
    let manifest = Manifest::load(path)?;
    if !config.snr_grid.is_empty() {
        manifest.check_grid(&config.snr_grid)?;
    }
    Ok(manifest)
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_mix(config: &RunConfig, manifest_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let mut manifest = load_manifest(config, manifest_path)?;
    if let Some(f) = config.val_fraction {
        manifest.assign_splits(f, config.seed)?;
    }
    fs::create_dir_all(out_dir).map_err(|source| CliError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for (i, row) in manifest.rows.iter().enumerate() {
        let clean_path = absolute(&manifest.resolve(&row.clean))?;
        let noise_path = absolute(&manifest.resolve(&row.noise))?;
        let clean = audio::load_wav(&clean_path, Role::Clean)?;
        let noise = audio::load_wav(&noise_path, Role::Noise)?;
        let offset = Manifest::noise_offset(row, clean.len(), noise.len(), config.mix);
        let mixture = Mixture::mix(&clean, &noise, row.snr_db, offset, row.split, row.condition())?;
        let peak = mixture.mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 1.0 {
            eprintln!("wfenhance: row {}: mixture peak {peak:.3} clips when written", i + 1);
        }
        let mix_path = absolute(&out_dir.join(format!("mix_{i:04}.wav")))?;
        audio::save_wav(&audio::Utterance::new(mixture.mixture, Role::Mixture), &mix_path)?;
        let mut out = row.clone();
        out.clean = clean_path;
        out.noise = noise_path;
        out.mixture = Some(mix_path);
        out.noise_offset = Some(offset);
        rows.push(out);
    }
    let updated = Manifest {
        rows,
        base_dir: absolute(out_dir)?,
    };
    write_text(&out_dir.join("manifest.csv"), &updated.to_csv()?)
}

fn cmd_stats(config: &RunConfig, manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(config, manifest_path)?;
    let train = manifest.mixtures(Split::Train, config.mix)?;
    if train.is_empty() {
        return Err(PipelineError::EmptySplit("train").into());
    }
    let ds = Dataset::from_mixtures(&train, LossWeighting::Mse, &config.stft)?;
    FeatureStats::fit(&ds)?.save(out)?;
    Ok(())
}

fn cmd_train(
    config: &RunConfig,
    manifest_path: &Path,
    stats_path: &Path,
    model_path: &Path,
    log_path: Option<&Path>,
) -> Result<(), CliError> {
    let manifest = load_manifest(config, manifest_path)?;
    let stats = FeatureStats::load(stats_path)?;
    let train = manifest.mixtures(Split::Train, config.mix)?;
    let val = manifest.mixtures(Split::Val, config.mix)?;
    let weighting = config.train.weighting;
    let train_set = Dataset::from_mixtures(&train, weighting, &config.stft)?;
    let val_set = if val.is_empty() {
        None
    } else {
        Some(Dataset::from_mixtures(&val, weighting, &config.stft)?)
    };
    let outcome = pipeline::train::<f32>(&train_set, val_set.as_ref(), &stats, config.topology.clone(), &config.train)?;
    neural::save_model(&outcome.model, model_path)?;
    emit(log_path, &outcome.log_csv())
}

fn cmd_enhance(config: &RunConfig, args: &EnhanceArgs) -> Result<(), CliError> {
    let model = neural::load_model::<f32>(&args.model)?;
    let stats = FeatureStats::load(&args.stats)?;
    pipeline::enhance::check_compatible(&model, &stats, &config.stft)?;
    let noisy = audio::load_wav(&args.input, Role::Mixture)?;
    let (out, masks) = enhance(&model, &stats, &noisy, &config.stft)?;
    audio::save_wav(&out, &args.output)?;
    if let Some(p) = &args.mask_trace {
        masks.save(p)?;
    }
    Ok(())
}

fn masks_for(
    model: &neural::Model<f32>,
    stats: &FeatureStats,
    mixture: &Mixture,
    config: &RunConfig,
) -> Result<MaskTrace, CliError> {
    let mags: Vec<Vec<f64>> = dsp::stft(&mixture.mixture, &config.stft)?.iter().map(|f| f.magnitude()).collect();
    Ok(predict_masks(model, stats, &mags)?)
}

fn cmd_eval(
    config: &RunConfig,
    manifest_path: &Path,
    model_path: &Path,
    stats_path: &Path,
    split: &str,
    out: Option<&Path>,
    rows_out: Option<&Path>,
) -> Result<(), CliError> {
    let split: Split = split.parse()?;
    let manifest = load_manifest(config, manifest_path)?;
    let model = neural::load_model::<f32>(model_path)?;
    let stats = FeatureStats::load(stats_path)?;
    pipeline::enhance::check_compatible(&model, &stats, &config.stft)?;
    let mixtures = manifest.mixtures(split, config.mix)?;
    if mixtures.is_empty() {
        return Err(PipelineError::EmptySplit(split.name()).into());
    }
    let mut rows = Vec::with_capacity(mixtures.len());
    for m in &mixtures {
        let masks = masks_for(&model, &stats, m, config)?;
        let (delta, ssdr) = metrics::evaluate(&m.clean, &m.noise, &masks, m.snr_db, &config.stft, &config.ssdr)?;
        rows.push(ReportRow {
            condition: m.condition.clone(),
            snr_in_db: m.snr_db,
            delta_snr_db: delta,
            ssdr_db: ssdr,
        });
    }
    let report = metrics::report(&rows);
    if let Some(p) = rows_out {
        write_text(p, &metrics::rows_csv(&rows))?;
    }
    match out {
        Some(p) => {
            write_text(p, &report.to_csv())?;
            print!("{}", report.to_table());
            Ok(())
        }
        None => emit(None, &report.to_csv()),
    }
}

fn cmd_sweep(config: &RunConfig, manifest_path: &Path, gamma1: &[f64], out: Option<&Path>) -> Result<(), CliError> {
    let manifest = load_manifest(config, manifest_path)?;
    let gammas = if gamma1.is_empty() { &config.sweep_gamma1[..] } else { gamma1 };
    for &g in gammas {
        percept::WeightConfig { gamma1: g, ..config.weight }
            .validate()
            .map_err(|e| ConfigError(format!("--gamma1: {e}")))?;
    }
    let train = manifest.mixtures(Split::Train, config.mix)?;
    let val = manifest.mixtures(Split::Val, config.mix)?;
    let sweep = SweepConfig {
        weight: config.weight,
        topology: config.topology.clone(),
        train: config.train.clone(),
        stft: config.stft,
        ssdr: config.ssdr,
    };
    let rows = sweep_gamma::<f32>(&train, &val, gammas, &sweep)?;
    emit(out, &sweep_csv(&rows))
}

fn cmd_analyze(
    config: &RunConfig,
    clean_path: &Path,
    noise_path: &Path,
    frame: usize,
    snr: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let clean = audio::load_wav(clean_path, Role::Clean)?;
    let mut noise = audio::load_wav(noise_path, Role::Noise)?;
    if let Some(snr) = snr {
        noise = audio::mix_at_snr(&clean, &noise, snr, 0)?.1;
    }
    let frames = dsp::windowed_frames(&clean.samples, &config.stft)?;
    let noise_frames = dsp::stft(&noise.samples, &config.stft)?;
    if frame >= frames.len() || frame >= noise_frames.len() {
        return Err(ConfigError(format!(
            "frame {frame} out of range: clean has {} frames, noise {}",
            frames.len(),
            noise_frames.len()
        ))
        .into());
    }
    let analysis = percept::analyze_frame(
        &frames[frame],
        &noise_frames[frame].magnitude(),
        &config.weight,
        config.stft.fft_size,
    )?;
    emit(out, &analysis.to_csv())
}

fn cmd_gradcheck(seed: u64) -> Result<(), CliError> {
    let mut ok = true;
    for (name, report) in gradcheck::run_suite(seed)? {
        let status = if report.passed() { "ok" } else { "FAILED" };
        println!(
            "{name}: {status} ({} entries, max relative error {:.2e})",
            report.checked, report.max_rel_error
        );
        for m in report.mismatches.iter().take(5) {
            println!(
                "  {}[{}]: analytic {:e}, numeric {:e}",
                m.parameter, m.index, m.analytic, m.numeric
            );
        }
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed)
    }
}
