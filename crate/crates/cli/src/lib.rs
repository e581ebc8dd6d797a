//! `aegan` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 training divergence,
//! 4 model mismatch, 1 anything else.

pub mod config;
pub mod render;

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use aegan_core::audio::{build_manifest, read_wav, write_wav, DatasetManifest, Split, SplitRule};
use aegan_core::metrics::{evaluate, EvalOptions};
use aegan_core::models::{load_checkpoint, CheckpointError, ModelParams};
use aegan_core::pipeline::{Denoiser, PipelineError, TrackCache};
use aegan_core::tfr::{stft_embed, to_log_magnitude, StftConfig, DEFAULT_FLOOR_DB};
use aegan_core::train::{checkpoint_path, train_with, GenLossForm, LossWeights, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand};

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

/// A diagnostic together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, message: impl Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn usage(message: impl Display) -> Failure {
    fail(EXIT_USAGE, message)
}

/// Comma-separated numbers, e.g. `0,5,10`.
#[derive(Clone, Debug, PartialEq)]
pub struct List(pub Vec<f64>);

fn parse_list(s: &str) -> Result<List, String> {
    s.split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| format!("{:?} is not a number", v.trim()))?;
            x.is_finite().then_some(x).ok_or_else(|| format!("{x} is not finite"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(List)
}

fn parse_grid(s: &str) -> Result<usize, String> {
    match s {
        "64" => Ok(64),
        "256" => Ok(256),
        _ => Err(format!("{s:?} is not one of 64, 256")),
    }
}

/// A split to restrict evaluation to, or `None` for every record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFilter(pub Option<Split>);

fn parse_split(s: &str) -> Result<SplitFilter, String> {
    match s {
        "all" => Ok(SplitFilter(None)),
        _ => Split::parse(s)
            .map(|x| SplitFilter(Some(x)))
            .ok_or_else(|| format!("{s:?} is not one of train, test, all")),
    }
}

#[derive(Parser, Debug)]
#[command(name = "aegan", version, about = "Spectrogram-domain speech enhancement with a conditional GAN")]
pub struct Cli {
    /// File of `key = value` lines applied before the command-line flags
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pair clean tracks with noise files at target SNRs and write a manifest
    Mix(MixArgs),
    /// Train the generator and discriminator on a manifest
    Train(TrainArgs),
    /// Enhance one recording with a trained model
    Denoise(DenoiseArgs),
    /// Score noisy or denoised mixtures against their clean references
    Eval(EvalArgs),
    /// Render the log-magnitude grid of a recording as a PNG
    Spectrogram(SpectrogramArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct MixArgs {
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long)]
    pub noise_dir: PathBuf,
    /// Target SNRs in dB
    #[arg(long, default_value = "0,5,10", value_parser = parse_list)]
    pub snrs: List,
    #[arg(long)]
    pub out_manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of speakers held out for testing
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Also write every noisy mixture as a WAV file into this directory
    #[arg(long)]
    pub materialize: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: u32,
    #[arg(long, default_value = "64", value_parser = parse_grid)]
    pub grid: usize,
    /// Directory receiving per-epoch checkpoints and the training log
    #[arg(long)]
    pub out: PathBuf,
    /// Adversarial, L1 and perceptual loss weights
    #[arg(long, default_value = "1,100,10", value_parser = parse_list)]
    pub weights: List,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Use the minimax generator loss instead of the non-saturating form
    #[arg(long)]
    pub minimax: bool,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct DenoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to denoise with; the noisy mixtures are scored without it
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed used when the mixtures were built for training
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Records to score: train, test or all
    #[arg(long, default_value = "all", value_parser = parse_split)]
    pub split: SplitFilter,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SpectrogramArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FLOOR_DB, allow_hyphen_values = true)]
    pub floor_db: f64,
    #[arg(long, default_value = "256", value_parser = parse_grid)]
    pub grid: usize,
}

fn grid_config(grid: usize) -> StftConfig {
    if grid == 256 {
        StftConfig::default()
    } else {
        StftConfig::square(grid)
    }
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    load_checkpoint(path).map_err(|e| match e {
        CheckpointError::Io(_) => usage(format!("--model {}: {e}", path.display())),
        _ => fail(EXIT_MISMATCH, format!("{}: {e}", path.display())),
    })
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    DatasetManifest::read(path).map_err(|e| usage(format!("--manifest: {e}")))
}

fn require_dir(flag: &str, path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} is not a directory", path.display())))
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Model(_) => fail(EXIT_MISMATCH, e),
        _ => usage(e),
    }
}

pub fn cmd_mix(a: &MixArgs) -> Result<(), Failure> {
    require_dir("--clean-dir", &a.clean_dir)?;
    require_dir("--noise-dir", &a.noise_dir)?;
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(usage(format!("--test-fraction: {} is outside [0, 1]", a.test_fraction)));
    }
    let rule = SplitRule::SpeakerHoldout {
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    let manifest = build_manifest(&a.clean_dir, &a.noise_dir, &a.snrs.0, rule).map_err(usage)?;
    manifest
        .write(&a.out_manifest)
        .map_err(|e| usage(format!("--out-manifest: {e}")))?;
    if let Some(dir) = &a.materialize {
        fs::create_dir_all(dir).map_err(|e| usage(format!("--materialize {}: {e}", dir.display())))?;
        let mut cache = TrackCache::new();
        for (i, r) in manifest.records.iter().enumerate() {
            let (_, noisy) = cache.mix(r, a.seed).map_err(usage)?;
            let name = format!("{i:05}_{}_{}_{}dB.wav", r.track_id(), r.noise_type(), r.snr_db);
            write_wav(dir.join(name), &noisy).map_err(|e| usage(format!("--materialize: {e}")))?;
        }
    }
    println!("{} records -> {}", manifest.len(), a.out_manifest.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let manifest = read_manifest(&a.manifest)?;
    let [w_adv, w_l1, w_percep] = a.weights.0[..] else {
        return Err(usage("--weights: expected three values w_adv,w_l1,w_percep"));
    };
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch_size,
        grid: a.grid,
        base_channels: a.base_channels,
        form: if a.minimax {
            GenLossForm::Minimax
        } else {
            GenLossForm::NonSaturating
        },
        out_dir: Some(a.out.clone()),
        ..TrainConfig::default()
    };
    if let Some(lr) = a.lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(usage(format!("--lr: {lr} must be positive")));
        }
        cfg.adam.lr = lr;
    }
    let n_layers = cfg.model_meta().discriminator.n_feature_layers;
    let weights = LossWeights::with(w_adv, w_l1, w_percep, n_layers);
    weights.validate(n_layers).map_err(|e| usage(format!("--weights: {e}")))?;
    cfg.validate().map_err(usage)?;
    let resume = match &a.resume {
        Some(path) => {
            let p = load_model(path)?;
            let fresh = cfg.model_meta();
            if p.meta.generator != fresh.generator || p.meta.stft != fresh.stft || p.meta.seed != cfg.seed {
                return Err(fail(
                    EXIT_MISMATCH,
                    format!("--resume {}: checkpoint does not match --grid/--base-channels/--seed", path.display()),
                ));
            }
            Some(p)
        }
        None => None,
    };
    let outcome = train_with(&manifest, &cfg, &weights, resume, |s| eprintln!("{}", s.log_line())).map_err(|e| {
        match e {
            TrainError::Diverged { .. } => fail(EXIT_DIVERGED, e),
            TrainError::EmptyCorpus
            | TrainError::InvalidConfig(_)
            | TrainError::InvalidWeights(_)
            | TrainError::Pipeline(_)
            | TrainError::Io { .. } => usage(e),
            _ => fail(EXIT_INTERNAL, e),
        }
    })?;
    println!("{}", checkpoint_path(&a.out, outcome.params.meta.epoch).display());
    Ok(())
}

pub fn cmd_denoise(a: &DenoiseArgs) -> Result<(), Failure> {
    let noisy = read_wav(&a.input).map_err(|e| usage(format!("--in {}: {e}", a.input.display())))?;
    let params = load_model(&a.model)?;
    let denoiser = Denoiser::from_model(&params).map_err(|e| fail(EXIT_MISMATCH, e))?;
    let out = denoiser.denoise(&noisy).map_err(pipeline_failure)?;
    write_wav(&a.out, &out).map_err(|e| usage(format!("--out {}: {e}", a.out.display())))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let manifest = read_manifest(&a.manifest)?;
    let denoiser = match &a.model {
        Some(path) => Some(Denoiser::from_model(&load_model(path)?).map_err(|e| fail(EXIT_MISMATCH, e))?),
        None => None,
    };
    let opts = EvalOptions {
        seed: a.seed,
        split: a.split.0,
    };
    let report = evaluate(&manifest, denoiser.as_ref(), opts);
    fs::write(&a.out, report.to_csv()).map_err(|e| usage(format!("--out {}: {e}", a.out.display())))?;
    match report.overall() {
        Some(s) => println!(
            "{} records: stoi {:.4}, seg_snr {:.3} dB, sdr {:.3} dB",
            report.rows.len(),
            s.stoi,
            s.seg_snr_db,
            s.sdr_db
        ),
        None => println!("{} records, none scored", report.rows.len()),
    }
    Ok(())
}

pub fn cmd_spectrogram(a: &SpectrogramArgs) -> Result<(), Failure> {
    let w = read_wav(&a.input).map_err(|e| usage(format!("--in {}: {e}", a.input.display())))?;
    if !(a.floor_db.is_finite() && a.floor_db < 0.0) {
        return Err(usage(format!("--floor-db: {} must be negative", a.floor_db)));
    }
    let cfg = grid_config(a.grid);
    let grid = stft_embed(&w, &cfg).map_err(|e| usage(format!("--in {}: {e}", a.input.display())))?;
    let lm = to_log_magnitude(&grid, a.floor_db);
    let png = render::render(&lm.values, grid.seconds_per_column())
        .to_png()
        .map_err(|e| fail(EXIT_INTERNAL, e))?;
    fs::write(&a.out, png).map_err(|e| usage(format!("--out {}: {e}", a.out.display())))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match config::expand_args(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match &cli.command {
        Command::Mix(a) => cmd_mix(a),
        Command::Train(a) => cmd_train(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Spectrogram(a) => cmd_spectrogram(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
