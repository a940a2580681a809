//! Joint training of the front-end, MobileFaceNet and classifier head on
//! normal clips labeled by machine ID.

mod adam;
mod bundle;
mod model;

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam, AdamConfig, AdamState};
pub use bundle::{load_bundle, save_bundle, EpochRecord, ModelBundle, BUNDLE_VERSION};
pub use model::{AsdModel, ModelSpec, Precision, PreparedClip};

use crate::classifier::{HeadConfig, MfnConfig};
use crate::dataio::{load_clip, Condition, DatasetManifest, LoadOptions, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureCache, FeatureKind, SpectralConfig};
use crate::nn::cross_entropy;
use crate::tgramnet::TgramConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Floor of the cosine schedule.
    pub eta_min: f64,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub head: HeadConfig,
    pub mfn: MfnConfig,
    pub tgram: TgramConfig,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; off when `None`.
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many epochs (the final one is always written).
    pub checkpoint_every: Option<usize>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            base_lr: 1e-4,
            eta_min: 0.0,
            seed: 0,
            feature_kind: FeatureKind::STgram,
            head: HeadConfig::default(),
            mfn: MfnConfig::default(),
            tgram: TgramConfig::default(),
            adam: AdamConfig::default(),
            grad_clip: None,
            checkpoint_every: None,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.eta_min >= 0.0) || self.eta_min > self.base_lr {
            return Err(Error::Config(format!(
                "eta_min must lie in [0, base_lr], got {}",
                self.eta_min
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.head.validate()?;
        self.mfn.validate()
    }
}

/// Cosine-annealed learning rate for a 0-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} is outside a {}-epoch schedule",
            cfg.epochs
        )));
    }
    if cfg.epochs == 1 {
        return Ok(cfg.base_lr);
    }
    if epoch == cfg.epochs - 1 {
        return Ok(cfg.eta_min);
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Where training writes its side artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoint file, rewritten at each checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Training log CSV.
    pub log: Option<PathBuf>,
    /// Continue from `checkpoint` if it exists.
    pub resume: bool,
    /// Spectral feature cache directory.
    pub cache: Option<PathBuf>,
}

/// Index permutation for one epoch, determined by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Splits `order` into batches of `batch_size`; a trailing batch of one is
/// folded into its predecessor since batch statistics need two samples.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = order.len() - batch_size - 1;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Loads and prepares every clip of a manifest, through `cache` if given.
pub fn prepare_clips(
    model: &AsdModel,
    manifest: &DatasetManifest,
    load: &LoadOptions,
    cache: Option<&FeatureCache>,
) -> Result<Vec<PreparedClip>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let wave = load_clip(&e.path, load)?.samples;
            match cache {
                Some(c) => model.prepare_cached(wave, &e.path.to_string_lossy(), c),
                None => model.prepare(wave),
            }
        })
        .collect()
}

/// Model architecture implied by the data, spectral settings and training config.
pub fn model_spec(
    spectral: &SpectralConfig,
    load: &LoadOptions,
    cfg: &TrainConfig,
    classes: usize,
) -> ModelSpec {
    ModelSpec {
        spectral: spectral.clone(),
        feature_kind: cfg.feature_kind,
        head: cfg.head.clone(),
        mfn: cfg.mfn.clone(),
        tgram: cfg.tgram.clone(),
        clip_length: load.target_length,
        classes,
        precision: cfg.precision,
    }
}

/// Trains on a manifest of normal training clips.
pub fn train(
    manifest: &DatasetManifest,
    spectral: &SpectralConfig,
    load: &LoadOptions,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<ModelBundle> {
    cfg.validate()?;
    if manifest.split != Split::Train {
        return Err(Error::InvalidInput("training needs a train-split manifest".into()));
    }
    if manifest.is_empty() {
        return Err(Error::InvalidInput("training manifest has no clips".into()));
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.label.condition != Condition::Normal) {
        return Err(Error::InvalidInput(format!(
            "training clip {} is not labeled normal",
            e.path.display()
        )));
    }
    if load.sample_rate != spectral.sample_rate {
        return Err(Error::Config(format!(
            "loader sample rate {} differs from spectral sample rate {}",
            load.sample_rate, spectral.sample_rate
        )));
    }
    let model = AsdModel::new(model_spec(spectral, load, cfg, manifest.class_count()), cfg.seed)?;
    let cache = opts.cache.as_ref().map(FeatureCache::new).transpose()?;
    let clips = prepare_clips(&model, manifest, load, cache.as_ref())?;
    let targets: Vec<u32> = manifest.entries.iter().map(|e| e.label.class_index as u32).collect();
    Trainer::new(model, manifest.id_map.clone(), cfg.clone(), opts.clone())?.run(&clips, &targets)
}

/// Stateful training loop over prepared clips.
pub struct Trainer {
    model: AsdModel,
    id_map: crate::dataio::IdMap,
    cfg: TrainConfig,
    opts: TrainOptions,
    adam: Adam,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: AsdModel, id_map: crate::dataio::IdMap, cfg: TrainConfig, opts: TrainOptions) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(cfg.adam.clone())?;
        let mut trainer = Self {
            model,
            id_map,
            cfg,
            opts,
            adam,
            epoch: 0,
            history: Vec::new(),
        };
        if trainer.opts.resume {
            if let Some(path) = trainer.opts.checkpoint.clone().filter(|p| p.exists()) {
                trainer.restore(&path)?;
            }
        }
        Ok(trainer)
    }

    fn restore(&mut self, path: &Path) -> Result<()> {
        let bundle = load_bundle(path)?;
        if bundle.spec != *self.model.spec() || bundle.id_map != self.id_map {
            return Err(Error::Checkpoint(format!(
                "{} was written for a different model or class map",
                path.display()
            )));
        }
        let mut expect = self.cfg.clone();
        expect.epochs = bundle.train.epochs;
        if bundle.train != expect {
            return Err(Error::Checkpoint(format!(
                "{} was written with different training settings",
                path.display()
            )));
        }
        self.model.store().import(&bundle.params)?;
        if let Some(state) = &bundle.optimizer {
            self.adam.import(self.model.store(), state)?;
        }
        self.epoch = bundle.epoch.min(self.cfg.epochs);
        self.history = bundle.history;
        log::info!("resumed from {} at epoch {}", path.display(), self.epoch);
        Ok(())
    }

    pub fn model(&self) -> &AsdModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn bundle(&self) -> Result<ModelBundle> {
        ModelBundle::capture(
            &self.model,
            self.cfg.clone(),
            self.id_map.clone(),
            self.epoch,
            self.history.clone(),
            Some(self.adam.export()?),
        )
    }

    fn checkpoint(&self) -> Result<()> {
        if let Some(path) = &self.opts.checkpoint {
            save_bundle(&self.bundle()?, path)?;
        }
        Ok(())
    }

    /// Mean loss of a batch under the training objective, without updating anything.
    pub fn batch_loss(&self, clips: &[&PreparedClip], targets: &[u32]) -> Result<f64> {
        let t = Tensor::new(targets, self.model.store().device())?;
        let logits = self.model.logits(clips, Some(&t), false)?;
        Ok(cross_entropy(&logits, &t)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }

    /// One pass over the data. Returns `(mean loss, accuracy)`.
    pub fn run_epoch(&mut self, clips: &[PreparedClip], targets: &[u32]) -> Result<(f64, f64)> {
        let lr = lr_at(self.epoch, &self.cfg)?;
        let order = epoch_order(clips.len(), self.cfg.seed, self.epoch);
        let device = self.model.store().device().clone();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in batches(&order, self.cfg.batch_size) {
            let items: Vec<&PreparedClip> = batch.iter().map(|&i| &clips[i]).collect();
            let batch_targets: Vec<u32> = batch.iter().map(|&i| targets[i]).collect();
            let t = Tensor::new(batch_targets.as_slice(), &device)?;
            let emb = self.model.embed(&items, true)?;
            let logits = self.model.head().logits(&emb, Some(&t))?;
            let loss = cross_entropy(&logits, &t)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(self.diverged(value));
            }
            let mut grads = loss.backward()?;
            if let Some(max) = self.cfg.grad_clip {
                clip_grad_norm(self.model.store(), &mut grads, max)?;
            }
            self.adam.step(self.model.store(), &grads, lr)?;
            let predicted: Vec<u32> = self
                .model
                .head()
                .logits(&emb.detach(), None)?
                .argmax(D::Minus1)?
                .to_vec1()?;
            correct += predicted.iter().zip(&batch_targets).filter(|(p, t)| p == t).count();
            loss_sum += value * batch.len() as f64;
        }
        let n = clips.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    fn diverged(&self, loss: f64) -> Error {
        if let Some(path) = &self.opts.checkpoint {
            let mut diag = path.as_os_str().to_owned();
            diag.push(".diverged");
            let diag = PathBuf::from(diag);
            match self.bundle().and_then(|b| save_bundle(&b, &diag)) {
                Ok(()) => log::error!("non-finite loss; diagnostic checkpoint at {}", diag.display()),
                Err(e) => log::error!("non-finite loss; diagnostic checkpoint failed: {e}"),
            }
        }
        Error::Diverged {
            epoch: self.epoch,
            loss,
        }
    }

    /// Trains until `cfg.epochs` epochs are complete and returns the final bundle.
    pub fn run(mut self, clips: &[PreparedClip], targets: &[u32]) -> Result<ModelBundle> {
        if clips.is_empty() || clips.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} clips with {} targets",
                clips.len(),
                targets.len()
            )));
        }
        let classes = self.model.spec().classes;
        if let Some(t) = targets.iter().find(|t| **t as usize >= classes) {
            return Err(Error::InvalidInput(format!("target {t} out of range for {classes} classes")));
        }
        let mut log = match &self.opts.log {
            Some(path) => Some(TrainLog::open(path, &self.history)?),
            None => None,
        };
        let start = Instant::now();
        let offset = self.history.last().map(|r| r.wall_time).unwrap_or(0.0);
        while self.epoch < self.cfg.epochs {
            let lr = lr_at(self.epoch, &self.cfg)?;
            let (mean_loss, train_accuracy) = self.run_epoch(clips, targets)?;
            let record = EpochRecord {
                epoch: self.epoch,
                mean_loss,
                train_accuracy,
                lr,
                wall_time: offset + start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} loss {:.5} acc {:.4} lr {:.3e}",
                record.epoch,
                record.mean_loss,
                record.train_accuracy,
                record.lr
            );
            if let Some(log) = log.as_mut() {
                log.append(&record)?;
            }
            self.history.push(record);
            self.epoch += 1;
            let due = self.cfg.checkpoint_every.is_some_and(|k| self.epoch % k == 0);
            if due && self.epoch < self.cfg.epochs {
                self.checkpoint()?;
            }
        }
        self.checkpoint()?;
        self.bundle()
    }
}

/// Append-only training log, rewritten from history on open so a resumed
/// run never duplicates rows.
struct TrainLog {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl TrainLog {
    fn open(path: &Path, history: &[EpochRecord]) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(["epoch", "mean_loss", "train_accuracy", "lr", "wall_time"])?;
        let mut log = Self {
            path: path.to_path_buf(),
            writer,
        };
        for r in history {
            log.append(r)?;
        }
        Ok(log)
    }

    fn append(&mut self, r: &EpochRecord) -> Result<()> {
        self.writer.write_record(&[
            r.epoch.to_string(),
            r.mean_loss.to_string(),
            r.train_accuracy.to_string(),
            r.lr.to_string(),
            format!("{:.3}", r.wall_time),
        ])?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a training log back.
pub fn read_train_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
