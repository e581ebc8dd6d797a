//! Composite generator objective and the alternating adversarial loop.

mod losses;

pub use losses::{
    adv_loss_d, adv_loss_g, l1_loss, perceptual_loss, tape_adv_loss_d, tape_adv_loss_g, tape_l1_loss,
    tape_perceptual_loss, GenLossForm, SCORE_EPS,
};

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{DatasetManifest, Split};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Bound, Real, Tape, Tensor, TensorError, Var};
use crate::models::{
    save_checkpoint, CasNet, CheckpointError, ModelError, ModelMeta, ModelParams, PatchDiscriminator,
};
use crate::pipeline::{grid_pairs, GridPair, PipelineError, TrackCache};
use crate::tfr::TfrError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("discriminator score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature lists differ in length (real {real}, fake {fake}, lambda {lambda})")]
    LengthMismatch { real: usize, fake: usize, lambda: usize },
    #[error("every loss weight is zero")]
    NoActiveLoss,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("the manifest has no training records")]
    EmptyCorpus,
    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Diverged { epoch: u32, step: u64, what: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tfr(#[from] TfrError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Weights of the generator's composite objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub w_adv: f64,
    pub w_l1: f64,
    pub w_percep: f64,
    /// Per-layer weights of the feature-matching term.
    pub lambda: Vec<f64>,
}

impl LossWeights {
    /// `w_adv = 1`, `w_l1 = 100`, `w_percep = 10`, uniform `λ = 1/N`.
    pub fn default_for(n_layers: usize) -> Self {
        Self::with(1.0, 100.0, 10.0, n_layers)
    }

    pub fn with(w_adv: f64, w_l1: f64, w_percep: f64, n_layers: usize) -> Self {
        Self {
            w_adv,
            w_l1,
            w_percep,
            lambda: vec![1.0 / n_layers as f64; n_layers],
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), TrainError> {
        let all = [self.w_adv, self.w_l1, self.w_percep];
        if all.iter().chain(&self.lambda).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TrainError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.lambda.len() != n_layers {
            return Err(TrainError::InvalidWeights(format!(
                "{} layer weights for {n_layers} discriminator layers",
                self.lambda.len()
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(TrainError::NoActiveLoss);
        }
        Ok(())
    }
}

/// Scalar outcome of one discriminator update followed by one generator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
    pub loss_g_percep: f64,
    pub loss_g_total: f64,
    /// Mean discriminator scores seen by the discriminator update.
    pub d_real: f64,
    pub d_fake: f64,
}

impl StepReport {
    /// Weighted contributions `(adv, l1, percep)` to the generator objective.
    pub fn contributions(&self, w: &LossWeights) -> (f64, f64, f64) {
        (
            w.w_adv * self.loss_g_adv,
            w.w_l1 * self.loss_g_l1,
            w.w_percep * self.loss_g_percep,
        )
    }
}

/// Tape handles of the generator objective and its components.
#[derive(Clone, Copy, Debug)]
pub struct GenObjective {
    pub total: Var,
    pub adv: Var,
    pub l1: Var,
    pub percep: Var,
    pub x_hat: Var,
}

/// Records the generator objective on `tape`.
///
/// Components with zero weight are still evaluated for reporting but kept
/// out of `total`, so no gradient work is spent on them.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Real>(
    tape: &mut Tape<T>,
    net: &CasNet,
    disc: &PatchDiscriminator,
    g_params: &Bound,
    d_params: &Bound,
    noisy: Var,
    clean: Var,
    weights: &LossWeights,
    form: GenLossForm,
) -> Result<GenObjective, TrainError> {
    let x_hat = net.forward(tape, g_params, noisy)?;
    let fake = disc.forward(tape, d_params, x_hat, noisy)?;
    let real = disc.forward(tape, d_params, clean, noisy)?;
    let adv = tape_adv_loss_g(tape, fake.score, form);
    let l1 = tape_l1_loss(tape, clean, x_hat)?;
    let percep = tape_perceptual_loss(tape, &real.features, &fake.features, &weights.lambda)?;
    let mut total: Option<Var> = None;
    for (term, w) in [(adv, weights.w_adv), (l1, weights.w_l1), (percep, weights.w_percep)] {
        if w == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, T::from_f64(w));
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    Ok(GenObjective {
        total: total.ok_or(TrainError::NoActiveLoss)?,
        adv,
        l1,
        percep,
        x_hat,
    })
}

/// A stacked batch of `[B, 1, H, W]` log-magnitude grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub noisy: Tensor<f32>,
    pub clean: Tensor<f32>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&GridPair]) -> Result<Self, TrainError> {
        let first = pairs
            .first()
            .ok_or_else(|| TrainError::ShapeMismatch("empty batch".into()))?;
        let (h, w) = first.noisy.dim();
        let mut noisy = Vec::with_capacity(pairs.len() * h * w);
        let mut clean = Vec::with_capacity(pairs.len() * h * w);
        for p in pairs {
            if p.noisy.dim() != (h, w) || p.clean.dim() != (h, w) {
                return Err(TrainError::ShapeMismatch(format!(
                    "batch mixes {h}x{w} with {:?}",
                    p.noisy.dim()
                )));
            }
            noisy.extend(p.noisy.iter().map(|&v| v as f32));
            clean.extend(p.clean.iter().map(|&v| v as f32));
        }
        let shape = vec![pairs.len(), 1, h, w];
        Ok(Self {
            noisy: Tensor::new(shape.clone(), noisy)?,
            clean: Tensor::new(shape, clean)?,
        })
    }
}

/// Networks, weights and optimizer state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    net: CasNet,
    disc: PatchDiscriminator,
    pub params: ModelParams,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub form: GenLossForm,
}

fn finite(v: f64, what: &'static str) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::Diverged { epoch: 0, step: 0, what })
    }
}

impl Trainer {
    pub fn new(
        mut params: ModelParams,
        weights: LossWeights,
        adam: AdamConfig,
        form: GenLossForm,
    ) -> Result<Self, TrainError> {
        let net = params.casnet()?;
        let disc = params.patch_discriminator()?;
        weights.validate(disc.config().n_feature_layers)?;
        params.check_layout().map_err(TrainError::InvalidConfig)?;
        if params.g_opt.is_none() {
            params.g_opt = Some(AdamState::new(&params.generator));
        }
        if params.d_opt.is_none() {
            params.d_opt = Some(AdamState::new(&params.discriminator));
        }
        Ok(Self {
            net,
            disc,
            params,
            weights,
            adam,
            form,
        })
    }

    pub fn net(&self) -> &CasNet {
        &self.net
    }

    pub fn disc(&self) -> &PatchDiscriminator {
        &self.disc
    }

    /// Updates the discriminator against a detached generator output.
    /// Returns `(loss_d, d_real, d_fake)` before the update.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<(f64, f64, f64), TrainError> {
        let mut tape = Tape::new();
        let gb = self.params.generator.bind(&mut tape, false);
        let db = self.params.discriminator.bind(&mut tape, true);
        let noisy = tape.constant(batch.noisy.clone());
        let clean = tape.constant(batch.clean.clone());
        let x_hat = self.net.forward(&mut tape, &gb, noisy)?;
        let x_hat = tape.detach(x_hat);
        let real = self.disc.forward(&mut tape, &db, clean, noisy)?;
        let fake = self.disc.forward(&mut tape, &db, x_hat, noisy)?;
        let loss = tape_adv_loss_d(&mut tape, real.score, fake.score)?;
        let report = (
            finite(f64::from(tape.scalar(loss)), "loss_d")?,
            finite(f64::from(tape.scalar(real.score)), "d_real")?,
            finite(f64::from(tape.scalar(fake.score)), "d_fake")?,
        );
        tape.backward(loss)?;
        let grads = self.params.discriminator.grads(&tape, &db);
        let state = self.params.d_opt.as_mut().expect("initialised in new");
        adam_step(&mut self.params.discriminator, &grads, state, &self.adam)?;
        Ok(report)
    }

    /// Updates the generator on the composite objective.
    /// Returns `(total, adv, l1, percep)` before the update.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<(f64, f64, f64, f64), TrainError> {
        let mut tape = Tape::new();
        let gb = self.params.generator.bind(&mut tape, true);
        let db = self.params.discriminator.bind(&mut tape, false);
        let noisy = tape.constant(batch.noisy.clone());
        let clean = tape.constant(batch.clean.clone());
        let obj = generator_objective(
            &mut tape,
            &self.net,
            &self.disc,
            &gb,
            &db,
            noisy,
            clean,
            &self.weights,
            self.form,
        )?;
        let value = |v: Var, what| finite(f64::from(tape.scalar(v)), what);
        let report = (
            value(obj.total, "loss_g_total")?,
            value(obj.adv, "loss_g_adv")?,
            value(obj.l1, "loss_g_l1")?,
            value(obj.percep, "loss_g_percep")?,
        );
        tape.backward(obj.total)?;
        let grads = self.params.generator.grads(&tape, &gb);
        let state = self.params.g_opt.as_mut().expect("initialised in new");
        adam_step(&mut self.params.generator, &grads, state, &self.adam)?;
        Ok(report)
    }

    /// One discriminator update, then one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport, TrainError> {
        let (loss_d, d_real, d_fake) = self.discriminator_step(batch)?;
        let (loss_g_total, loss_g_adv, loss_g_l1, loss_g_percep) = self.generator_step(batch)?;
        Ok(StepReport {
            loss_d,
            loss_g_adv,
            loss_g_l1,
            loss_g_percep,
            loss_g_total,
            d_real,
            d_fake,
        })
    }

    /// Generator output for one noisy grid batch, no gradients recorded.
    pub fn generate(&self, noisy: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        generate(&self.net, &self.params, noisy)
    }
}

fn generate(net: &CasNet, params: &ModelParams, noisy: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
    let mut tape = Tape::new();
    let gb = params.generator.bind(&mut tape, false);
    let x = tape.constant(noisy.clone());
    let y = net.forward(&mut tape, &gb, x)?;
    Ok(tape.value(y).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub seed: u64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Side of the square grid, 64 or 256.
    pub grid: usize,
    pub base_channels: usize,
    pub form: GenLossForm,
    /// Receives per-epoch checkpoints and the training log.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            adam: AdamConfig::default(),
            batch_size: 1,
            grid: 64,
            base_channels: 16,
            form: GenLossForm::default(),
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.grid != 64 && self.grid != 256 {
            return Err(TrainError::InvalidConfig(format!(
                "grid {} is not one of 64, 256",
                self.grid
            )));
        }
        Ok(())
    }

    /// Model metadata for a fresh run.
    pub fn model_meta(&self) -> ModelMeta {
        let mut meta = ModelMeta::for_grid(self.grid);
        meta.generator.ublock.base_channels = self.base_channels;
        meta.discriminator.base_channels = self.base_channels;
        meta.seed = self.seed;
        meta
    }
}

/// Means over one epoch; one line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u32,
    /// Cumulative generator updates.
    pub step: u64,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
    pub loss_g_percep: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

pub const LOG_HEADER: &str = "epoch\tstep\tloss_d\tloss_g_adv\tloss_g_l1\tloss_g_percep\td_real\td_fake";

impl EpochSummary {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.step,
            self.loss_d,
            self.loss_g_adv,
            self.loss_g_l1,
            self.loss_g_percep,
            self.d_real,
            self.d_fake
        )
    }
}

/// Final weights plus the per-epoch summaries of this invocation.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochSummary>,
}

/// Mixes, splits and embeds every record of `split`, in manifest order.
pub fn load_grid_pairs(
    manifest: &DatasetManifest,
    split: Split,
    meta: &ModelMeta,
    seed: u64,
) -> Result<Vec<GridPair>, TrainError> {
    let mut cache = TrackCache::new();
    let mut pairs = Vec::new();
    for record in manifest.split(split) {
        let (clean, noisy) = cache.mix(record, seed)?;
        pairs.extend(grid_pairs(&clean, &noisy, &meta.stft, meta.floor_db)?);
    }
    Ok(pairs)
}

/// Mean L1 distance to the clean grids of the generator output and of the
/// noisy input, `(denoised, noisy)`.
pub fn grid_l1(params: &ModelParams, pairs: &[GridPair]) -> Result<(f64, f64), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let net = params.casnet()?;
    let (mut den, mut noi) = (0.0, 0.0);
    for p in pairs {
        let b = Batch::from_pairs(&[p])?;
        let x_hat = generate(&net, params, &b.noisy)?;
        den += l1_loss(&b.clean, &x_hat)?;
        noi += l1_loss(&b.clean, &b.noisy)?;
    }
    let n = pairs.len() as f64;
    Ok((den / n, noi / n))
}

pub fn checkpoint_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.aegan"))
}

pub fn log_path(dir: &Path) -> PathBuf {
    dir.join("train.log")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_owned(),
        source,
    }
}

fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(epoch));
    order.shuffle(&mut rng);
    order
}

/// Trains from a fresh initialisation.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, weights: &LossWeights) -> Result<TrainOutcome, TrainError> {
    train_with(manifest, cfg, weights, None, |_| {})
}

/// Trains from `resume` when given (continuing after its recorded epoch),
/// calling `on_epoch` after every completed epoch.
pub fn train_with(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    weights: &LossWeights,
    resume: Option<ModelParams>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let params = match resume {
        Some(p) => {
            if p.meta.stft.n_time != cfg.grid || p.meta.seed != cfg.seed {
                return Err(TrainError::InvalidConfig(format!(
                    "checkpoint was trained with grid {} and seed {}",
                    p.meta.stft.n_time, p.meta.seed
                )));
            }
            p
        }
        None => ModelParams::init(cfg.model_meta())?,
    };
    let start = params.meta.epoch;
    if start >= cfg.epochs {
        return Err(TrainError::InvalidConfig(format!(
            "checkpoint already covers {start} of {} epochs",
            cfg.epochs
        )));
    }
    let pairs = load_grid_pairs(manifest, Split::Train, &params.meta, cfg.seed)?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(params, weights.clone(), cfg.adam, cfg.form)?;

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log = log_path(dir);
        if start == 0 {
            fs::write(&log, format!("{LOG_HEADER}\n")).map_err(io_err(&log))?;
        }
    }

    let mut log = Vec::new();
    for epoch in start + 1..=cfg.epochs {
        let order = epoch_order(pairs.len(), cfg.seed, epoch);
        let mut sums = [0.0; 6];
        let mut n = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let members: Vec<&GridPair> = idx.iter().map(|&i| &pairs[i]).collect();
            let batch = Batch::from_pairs(&members)?;
            let step = trainer.params.g_opt.as_ref().map_or(0, |s| s.step) + 1;
            let r = trainer.train_step(&batch).map_err(|e| match e {
                TrainError::Diverged { what, .. } => TrainError::Diverged { epoch, step, what },
                e => e,
            })?;
            for (s, v) in sums
                .iter_mut()
                .zip([r.loss_d, r.loss_g_adv, r.loss_g_l1, r.loss_g_percep, r.d_real, r.d_fake])
            {
                *s += v;
            }
            n += 1;
        }
        let m = sums.map(|s| s / n as f64);
        trainer.params.meta.epoch = epoch;
        let summary = EpochSummary {
            epoch,
            step: trainer.params.g_opt.as_ref().map_or(0, |s| s.step),
            loss_d: m[0],
            loss_g_adv: m[1],
            loss_g_l1: m[2],
            loss_g_percep: m[3],
            d_real: m[4],
            d_fake: m[5],
        };
        if let Some(dir) = &cfg.out_dir {
            save_checkpoint(&trainer.params, checkpoint_path(dir, epoch))?;
            let path = log_path(dir);
            let mut f = fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(&path)
                .map_err(io_err(&path))?;
            writeln!(f, "{}", summary.log_line()).map_err(io_err(&path))?;
        }
        on_epoch(&summary);
        log.push(summary);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        log,
    })
}

/// The whole log of a run as text, header included.
pub fn format_log(entries: &[EpochSummary]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in entries {
        let _ = writeln!(s, "{}", e.log_line());
    }
    s
}
