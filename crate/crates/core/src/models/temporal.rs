use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{PatchLoader, PatchRecord, MONTHS};
use crate::error::{Error, Result};
use crate::models::artifact::{read_weights, weights_hash, write_weights, ArtifactKind, ArtifactMeta, FeatureCache, CODE_VERSION};
use crate::models::mono::MonoModel;
use crate::models::TemporalHeadConfig;
use crate::nn::layers::softmax;
use crate::nn::{AdamConfig, ParamAllocator, TemporalCache, TemporalHead};
use crate::ontology::{LabelDistribution, Level, Ontology};
use crate::scalar::Scalar;

/// One encoder feature vector per month, January first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }
}

/// Encoder features of every month of `record`, in month order.
pub fn extract_feature_sequence<T: Scalar>(
    encoder: &MonoModel<T>,
    loader: &PatchLoader,
    record: &PatchRecord,
) -> Result<FeatureSequence<T>> {
    let mut cache = extract_feature_sequences(encoder, loader, std::slice::from_ref(record))?;
    Ok(cache.pop().expect("one record in, one out").1)
}

/// Batched form of [`extract_feature_sequence`]: every month is read once per
/// tile and the patches are encoded in parallel. Output follows `records`.
pub fn extract_feature_sequences<T: Scalar, R: std::borrow::Borrow<PatchRecord> + Sync>(
    encoder: &MonoModel<T>,
    loader: &PatchLoader,
    records: &[R],
) -> Result<FeatureCache<T>> {
    for r in records {
        r.borrow().require_all_months()?;
    }
    let mut rows: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(MONTHS as usize); records.len()];
    for month in 1..=MONTHS {
        let patches = loader.load_month(records, month)?;
        let feats: Vec<Vec<T>> = patches
            .par_iter()
            .map(|p| Ok(encoder.features(&encoder.input_raw(p)?)))
            .collect::<Result<_>>()?;
        for (r, f) in rows.iter_mut().zip(feats) {
            r.push(f);
        }
    }
    records
        .iter()
        .zip(rows)
        .map(|(r, rows)| Ok((r.borrow().patch_id.clone(), FeatureSequence::new(rows)?)))
        .collect()
}

/// Recurrent head over frozen encoder features.
#[derive(Clone, Debug)]
pub struct TemporalModel<T> {
    pub meta: ArtifactMeta,
    pub encoder: MonoModel<T>,
    head: TemporalHead,
    params: Vec<T>,
}

fn layout(config: &TemporalHeadConfig, feature_dim: usize, n_classes: usize) -> Result<(TemporalHead, usize)> {
    config.validate()?;
    let mut alloc = ParamAllocator::new();
    let head = TemporalHead::new(&mut alloc, feature_dim, config.lstm_hidden, config.lstm_layers, config.fc_hidden, n_classes);
    Ok((head, alloc.len()))
}

impl<T: Scalar> TemporalModel<T> {
    pub fn new(config: TemporalHeadConfig, encoder: MonoModel<T>, level: Level, seed: u64) -> Result<Self> {
        let n_classes = level.cardinality();
        let (head, n) = layout(&config, encoder.feature_dim(), n_classes)?;
        let mut params = vec![T::zero(); n];
        head.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        let meta = ArtifactMeta {
            kind: ArtifactKind::Temporal,
            level,
            n_classes,
            encoder: encoder.meta.encoder.clone(),
            head: Some(config),
            month: None,
            optimizer: AdamConfig::default(),
            seed,
            code_version: CODE_VERSION.to_string(),
            dtype: T::DTYPE.to_string(),
            encoder_hash: Some(encoder.weights_hash()),
            training: None,
        };
        Ok(Self {
            meta,
            encoder,
            head,
            params,
        })
    }

    pub fn from_parts(meta: ArtifactMeta, encoder: MonoModel<T>, params: Vec<T>) -> Result<Self> {
        if meta.kind != ArtifactKind::Temporal {
            return Err(Error::Incompatible("artifact is not a multi-temporal model".into()));
        }
        let config = meta
            .head
            .clone()
            .ok_or_else(|| Error::Incompatible("temporal artifact lacks a head configuration".into()))?;
        if let Some(expected) = &meta.encoder_hash {
            if *expected != encoder.weights_hash() {
                return Err(Error::Incompatible("encoder weights do not match the hash recorded at training".into()));
            }
        }
        let (head, n) = layout(&config, encoder.feature_dim(), meta.n_classes)?;
        if params.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: params.len(),
            });
        }
        Ok(Self {
            meta,
            encoder,
            head,
            params,
        })
    }

    pub fn level(&self) -> Level {
        self.meta.level
    }

    pub fn config(&self) -> &TemporalHeadConfig {
        self.meta.head.as_ref().expect("temporal meta has a head")
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn hidden(&self) -> usize {
        self.head.hidden()
    }

    pub fn check_sequence(&self, seq: &FeatureSequence<T>) -> Result<()> {
        let steps = self.config().sequence_length;
        if seq.len() != steps {
            return Err(Error::Shape(format!("expected {steps} time steps, found {}", seq.len())));
        }
        if seq.dim() != self.encoder.feature_dim() {
            return Err(Error::Shape(format!(
                "expected {}-d features, found {}-d",
                self.encoder.feature_dim(),
                seq.dim()
            )));
        }
        Ok(())
    }

    pub fn temporal_forward(&self, seq: &FeatureSequence<T>) -> Result<LabelDistribution<T>> {
        self.check_sequence(seq)?;
        let (logits, _) = self.head.forward(&self.params, seq.rows(), None);
        Ok(LabelDistribution::new(self.level(), softmax(&logits)).expect("softmax output is a distribution"))
    }

    /// Predicted distributions for records, via their monthly encoder features.
    pub fn predict_records<R: std::borrow::Borrow<PatchRecord> + Sync>(
        &self,
        loader: &PatchLoader,
        records: &[R],
    ) -> Result<Vec<LabelDistribution<T>>> {
        let feats = extract_feature_sequences(&self.encoder, loader, records)?;
        feats.par_iter().map(|(_, s)| self.temporal_forward(s)).collect()
    }

    pub(crate) fn forward_cached(&self, seq: &FeatureSequence<T>, mask: Option<Vec<T>>) -> (Vec<T>, TemporalCache<T>) {
        self.head.forward(&self.params, seq.rows(), mask)
    }

    pub(crate) fn backward(&self, cache: &TemporalCache<T>, grad_logits: &[T], grads: &mut [T]) {
        self.head.backward(&self.params, cache, grad_logits, grads);
    }

    /// Writes the head artifact plus the frozen encoder under `encoder/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.meta.save(dir)?;
        write_weights(&dir.join("weights.bin"), &self.params)?;
        self.encoder.stats.save(&dir.join("stats.json"))?;
        let onto = dir.join("ontology.json");
        fs::write(&onto, Ontology::builtin().to_json()).map_err(|e| Error::io(&onto, e))?;
        self.encoder.save(&dir.join("encoder"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = ArtifactMeta::load(dir)?;
        let encoder = MonoModel::load(&dir.join("encoder"))?;
        let params = read_weights(&dir.join("weights.bin"))?;
        Self::from_parts(meta, encoder, params)
    }

    pub fn weights_hash(&self) -> String {
        weights_hash(&self.params)
    }
}
