//! Losses, learning-rate schedule and the two training loops.
//!
//! Gradients are accumulated per fixed-size chunk of a batch in parallel and
//! the chunk sums are added in chunk order, so results do not depend on the
//! number of worker threads.

mod losses;

use std::borrow::Borrow;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::synth::derive_seed;
use crate::data::{PatchLoader, PatchRecord};
use crate::error::{Error, Result};
use crate::evaluation::{distribution_to_labels, micro_f1, truth_to_labels, ThresholdRule, DEFAULT_TAU};
use crate::models::{
    extract_feature_sequences, load_feature_cache, save_feature_cache, EncoderConfig, FeatureCache, FeatureSequence,
    MonoModel, TemporalHeadConfig, TemporalModel, DEFAULT_MONO_MONTH,
};
use crate::nn::layers::softmax;
use crate::nn::{Act, Adam, AdamConfig};
use crate::ontology::{to_level, Level};
use crate::preprocess::compute_channel_stats;
use crate::scalar::Scalar;

pub use losses::{bce_loss, focal_loss, kl_loss, Loss, LossKind, CLAMP_EPS, DEFAULT_FOCAL_GAMMA};

/// Samples per gradient chunk.
const GRAD_CHUNK: usize = 8;
const TAG_SHUFFLE: u64 = 11;
const TAG_DROPOUT: u64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_mono: f64,
    pub lr_temporal: f64,
    pub lr_decay_gamma: f64,
    pub lr_decay_interval_epochs: usize,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
    /// Threshold used for validation micro-F1 during model selection.
    pub tau: f64,
    /// Month the single-date model is trained on.
    pub mono_month: u8,
    pub encoder: EncoderConfig,
    pub temporal: TemporalHeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr_mono: 1e-4,
            lr_temporal: 1e-5,
            lr_decay_gamma: 0.1,
            lr_decay_interval_epochs: 1,
            loss: LossKind::Kl,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            batch_size: 64,
            seed: 0,
            weight_decay: 0.0,
            tau: DEFAULT_TAU,
            mono_month: DEFAULT_MONO_MONTH,
            encoder: EncoderConfig::default(),
            temporal: TemporalHeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        for (field, lr) in [("lr_mono", self.lr_mono), ("lr_temporal", self.lr_temporal)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {lr}")));
            }
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(Error::config("lr_decay_gamma", "must lie in (0, 1]"));
        }
        if self.lr_decay_interval_epochs == 0 {
            return Err(Error::config("lr_decay_interval_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(1..=12).contains(&self.mono_month) {
            return Err(Error::config("mono_month", "must lie in 1..=12"));
        }
        ThresholdRule::new(self.tau)?;
        Loss::new(self.loss, self.focal_gamma)?;
        self.encoder.validate()?;
        self.temporal.validate()
    }

    fn loss(&self) -> Loss {
        Loss {
            kind: self.loss,
            focal_gamma: self.focal_gamma,
        }
    }

    fn optimizer(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// `lr0 · gamma^⌊epoch / interval⌋`, epochs counted from 0.
pub fn lr_at(lr0: f64, gamma: f64, interval: usize, epoch: usize) -> f64 {
    lr0 * gamma.powi((epoch / interval.max(1)) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's samples, measured before each update.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_micro_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub wall_seconds: f64,
}

impl TrainLog {
    pub fn lrs(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.epochs {
            let line = serde_json::to_string(e).expect("epoch serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<EpochLog>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
            .collect()
    }
}

/// What the shared loop needs from a network.
trait Trainable<T: Scalar>: Sync {
    type Input: Sync;
    type Cache;

    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];
    fn logits(&self, x: &Self::Input) -> Vec<T>;
    fn forward_train(&self, x: &Self::Input, noise_seed: u64) -> (Vec<T>, Self::Cache);
    fn backward(&self, cache: &Self::Cache, grad_logits: &[T], grads: &mut [T]);
}

impl<T: Scalar> Trainable<T> for MonoModel<T> {
    type Input = Act<T>;
    type Cache = crate::models::MonoCache<T>;

    fn params(&self) -> &[T] {
        MonoModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [T] {
        MonoModel::params_mut(self)
    }

    fn logits(&self, x: &Act<T>) -> Vec<T> {
        self.head_logits(&self.features(x))
    }

    fn forward_train(&self, x: &Act<T>, _: u64) -> (Vec<T>, Self::Cache) {
        self.forward_cached(x)
    }

    fn backward(&self, cache: &Self::Cache, grad_logits: &[T], grads: &mut [T]) {
        MonoModel::backward(self, cache, grad_logits, grads)
    }
}

impl<T: Scalar> Trainable<T> for TemporalModel<T> {
    type Input = FeatureSequence<T>;
    type Cache = crate::nn::TemporalCache<T>;

    fn params(&self) -> &[T] {
        TemporalModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [T] {
        TemporalModel::params_mut(self)
    }

    fn logits(&self, x: &FeatureSequence<T>) -> Vec<T> {
        self.forward_cached(x, None).0
    }

    fn forward_train(&self, x: &FeatureSequence<T>, noise_seed: u64) -> (Vec<T>, Self::Cache) {
        let p = self.config().dropout;
        let mask = (p > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let keep = T::from_f64_lossy(1.0 / (1.0 - p));
            (0..self.hidden())
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect()
        });
        self.forward_cached(x, mask)
    }

    fn backward(&self, cache: &Self::Cache, grad_logits: &[T], grads: &mut [T]) {
        TemporalModel::backward(self, cache, grad_logits, grads)
    }
}

/// Mean loss and micro-F1 of `model` on `data`.
fn score<T: Scalar, M: Trainable<T>>(model: &M, data: &[(M::Input, Vec<T>)], loss: Loss, rule: ThresholdRule) -> Result<(f64, f64)> {
    let rows: Vec<(f64, _, _)> = data
        .par_iter()
        .map(|(x, t)| {
            let logits = model.logits(x);
            let (l, _) = loss.with_grad(t, &logits)?;
            Ok((l, distribution_to_labels(&softmax(&logits), rule), truth_to_labels(t)))
        })
        .collect::<Result<_>>()?;
    let total: f64 = rows.iter().map(|r| r.0).sum();
    let (pred, truth): (Vec<_>, Vec<_>) = rows.into_iter().map(|r| (r.1, r.2)).unzip();
    Ok((total / data.len() as f64, micro_f1(&pred, &truth)?))
}

fn fit<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    train: &[(M::Input, Vec<T>)],
    val: &[(M::Input, Vec<T>)],
    lr0: f64,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no patches".into()));
    }
    if val.is_empty() {
        log::warn!("no validation patches; keeping the final epoch's weights");
    }
    let loss = config.loss();
    let rule = ThresholdRule::new(config.tau)?;
    let n_params = model.params().len();
    let mut adam = Adam::new(config.optimizer(), n_params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<T>)> = None;
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let lr = lr_at(lr0, config.lr_decay_gamma, config.lr_decay_interval_epochs, epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_SHUFFLE, epoch as u64])));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let m: &M = model;
            let parts: Vec<(f64, Vec<T>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = vec![T::zero(); n_params];
                    let mut total = 0.0;
                    for &i in chunk {
                        let (x, target) = &train[i];
                        let noise = derive_seed(config.seed, &[TAG_DROPOUT, epoch as u64, i as u64]);
                        let (logits, cache) = m.forward_train(x, noise);
                        let (l, g) = loss.with_grad(target, &logits)?;
                        m.backward(&cache, &g, &mut grads);
                        total += l;
                    }
                    Ok((total, grads))
                })
                .collect::<Result<_>>()?;
            let mut grads = vec![T::zero(); n_params];
            for (l, g) in parts {
                epoch_loss += l;
                for (a, b) in grads.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = T::one() / T::from_usize_lossy(batch.len());
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(model.params_mut(), &grads, lr);
        }
        let (val_loss, val_f1) = if val.is_empty() {
            (None, None)
        } else {
            let (l, f) = score(model, val, loss, rule)?;
            (Some(l), Some(f))
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            val_micro_f1: val_f1,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train loss {:.5} val loss {} val micro-F1 {}",
            entry.train_loss,
            val_loss.map_or("-".into(), |v| format!("{v:.5}")),
            val_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
        log.epochs.push(entry);
        let f1 = val_f1.unwrap_or(f64::NEG_INFINITY);
        if val.is_empty() || best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, model.params().to_vec()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Train the single-date model on already normalized inputs.
pub fn fit_mono<T: Scalar>(
    model: &mut MonoModel<T>,
    train: &[(Act<T>, Vec<T>)],
    val: &[(Act<T>, Vec<T>)],
    config: &TrainConfig,
) -> Result<TrainLog> {
    model.meta.optimizer = config.optimizer();
    fit(model, train, val, config.lr_mono, config)
}

/// Train only the recurrent head on precomputed feature sequences.
pub fn fit_temporal<T: Scalar>(
    model: &mut TemporalModel<T>,
    train: &[(FeatureSequence<T>, Vec<T>)],
    val: &[(FeatureSequence<T>, Vec<T>)],
    config: &TrainConfig,
) -> Result<TrainLog> {
    for (seq, _) in train.iter().chain(val) {
        model.check_sequence(seq)?;
    }
    model.meta.optimizer = config.optimizer();
    fit(model, train, val, config.lr_temporal, config)
}

fn targets<T: Scalar, R: Borrow<PatchRecord>>(records: &[R], level: Level) -> Result<Vec<Vec<T>>> {
    records
        .iter()
        .map(|r| Ok(to_level(&r.borrow().label, level)?.cast::<T>().into_probs()))
        .collect()
}

fn check_loader(loader: &PatchLoader, config: &TrainConfig) -> Result<()> {
    if loader.patch_px != config.encoder.patch_px {
        return Err(Error::config(
            "patch_px",
            format!("loader yields {} px patches but the encoder expects {}", loader.patch_px, config.encoder.patch_px),
        ));
    }
    Ok(())
}

/// End-to-end training of encoder and distribution head on `config.mono_month`.
/// Channel statistics come from the training patches of that month.
pub fn train_mono<T: Scalar, R: Borrow<PatchRecord> + Sync>(
    train: &[R],
    val: &[R],
    config: &TrainConfig,
    level: Level,
    loader: &PatchLoader,
) -> Result<(MonoModel<T>, TrainLog)> {
    config.validate()?;
    check_loader(loader, config)?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no patches".into()));
    }
    let month = config.mono_month;
    let train_patches = loader.load_month(train, month)?;
    let stats = compute_channel_stats(train_patches.iter())?;
    let mut model = MonoModel::<T>::new(config.encoder.clone(), level, stats, config.seed)?;
    model.meta.month = Some(month);
    model.meta.training = Some(serde_json::to_value(config).expect("config serialize"));
    let inputs = |patches: Vec<crate::raster::Raster<f32>>, model: &MonoModel<T>| -> Result<Vec<Act<T>>> {
        patches.par_iter().map(|p| model.input_raw(p)).collect()
    };
    let train_set: Vec<_> = inputs(train_patches, &model)?.into_iter().zip(targets(train, level)?).collect();
    let val_set: Vec<_> = inputs(loader.load_month(val, month)?, &model)?
        .into_iter()
        .zip(targets(val, level)?)
        .collect();
    let log = fit_mono(&mut model, &train_set, &val_set, config)?;
    Ok((model, log))
}

/// Feature sequences for `records`, reusing `cache` when it holds exactly
/// these patches for this encoder and writing it otherwise.
pub fn cached_features<T: Scalar, R: Borrow<PatchRecord> + Sync>(
    encoder: &MonoModel<T>,
    loader: &PatchLoader,
    records: &[R],
    cache: Option<&Path>,
) -> Result<FeatureCache<T>> {
    if let Some(path) = cache {
        if path.exists() {
            let loaded = load_feature_cache::<T>(path)?;
            let same = loaded.len() == records.len()
                && loaded.iter().zip(records).all(|((id, s), r)| *id == r.borrow().patch_id && s.dim() == encoder.feature_dim());
            if same {
                return Ok(loaded);
            }
            log::info!("feature cache {} is stale; recomputing", path.display());
        }
    }
    let feats = extract_feature_sequences(encoder, loader, records)?;
    if let Some(path) = cache {
        save_feature_cache(path, &feats)?;
    }
    Ok(feats)
}

/// Train a recurrent head over the frozen `encoder`'s monthly features.
/// `cache_dir`, when given, keeps the extracted features between runs.
pub fn train_temporal<T: Scalar, R: Borrow<PatchRecord> + Sync>(
    train: &[R],
    val: &[R],
    config: &TrainConfig,
    encoder: &MonoModel<T>,
    level: Level,
    loader: &PatchLoader,
    cache_dir: Option<&Path>,
) -> Result<(TemporalModel<T>, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no patches".into()));
    }
    if loader.patch_px != encoder.patch_px() {
        return Err(Error::config(
            "patch_px",
            format!("loader yields {} px patches but the encoder expects {}", loader.patch_px, encoder.patch_px()),
        ));
    }
    let hash = encoder.weights_hash();
    let cache_path = |name: &str| cache_dir.map(|d| d.join(format!("features_{name}_{}.bin", &hash[..16])));
    if let Some(d) = cache_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let train_feats = cached_features(encoder, loader, train, cache_path("train").as_deref())?;
    let val_feats = cached_features(encoder, loader, val, cache_path("val").as_deref())?;
    let mut model = TemporalModel::new(config.temporal.clone(), encoder.clone(), level, config.seed)?;
    model.meta.training = Some(serde_json::to_value(config).expect("config serialize"));
    let train_set: Vec<_> = train_feats.into_iter().map(|(_, s)| s).zip(targets(train, level)?).collect();
    let val_set: Vec<_> = val_feats.into_iter().map(|(_, s)| s).zip(targets(val, level)?).collect();
    let log = fit_temporal(&mut model, &train_set, &val_set, config)?;
    Ok((model, log))
}
