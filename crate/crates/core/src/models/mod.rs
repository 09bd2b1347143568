//! Mono-temporal (encoder + distribution head) and multi-temporal (frozen
//! encoder features + recurrent head) classifiers.

mod artifact;
mod mono;
mod temporal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BackboneSpec;
use crate::scalar::Scalar;

pub use artifact::{
    load_feature_cache, read_weights, save_feature_cache, weights_hash, write_weights, ArtifactKind, ArtifactMeta,
    FeatureCache, CODE_VERSION,
};
pub use mono::MonoModel;
pub(crate) use mono::MonoCache;
pub use temporal::{extract_feature_sequence, extract_feature_sequences, FeatureSequence, TemporalModel};

/// Month a single-date model trains and predicts on unless configured otherwise.
pub const DEFAULT_MONO_MONTH: u8 = 6;

/// Either kind of trained classifier, as found in an artifact directory.
#[derive(Clone, Debug)]
pub enum Model<T> {
    Mono(MonoModel<T>),
    Temporal(TemporalModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        match ArtifactMeta::load(dir)?.kind {
            ArtifactKind::Mono => Ok(Model::Mono(MonoModel::load(dir)?)),
            ArtifactKind::Temporal => Ok(Model::Temporal(TemporalModel::load(dir)?)),
        }
    }

    pub fn meta(&self) -> &ArtifactMeta {
        match self {
            Model::Mono(m) => &m.meta,
            Model::Temporal(m) => &m.meta,
        }
    }

    pub fn level(&self) -> crate::ontology::Level {
        self.meta().level
    }

    pub fn patch_px(&self) -> usize {
        self.meta().encoder.patch_px
    }

    /// Predictions for `records`: single-date models read their configured
    /// month, temporal models read all twelve.
    pub fn predict_records<R: std::borrow::Borrow<crate::data::PatchRecord> + Sync>(
        &self,
        loader: &crate::data::PatchLoader,
        records: &[R],
    ) -> Result<Vec<crate::ontology::LabelDistribution<T>>> {
        match self {
            Model::Mono(m) => {
                let month = m.meta.month.unwrap_or(DEFAULT_MONO_MONTH);
                m.predict_batch(&loader.load_month(records, month)?)
            }
            Model::Temporal(m) => m.predict_records(loader, records),
        }
    }
}

/// First-layer weights for the near-infrared band when starting from RGB weights.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelInit {
    /// Mean of the red, green and blue kernels.
    #[default]
    MeanRgb,
    /// Fresh He-normal weights.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `resnet50`, `resnet18` or `tiny`.
    pub backbone: String,
    pub input_channels: usize,
    /// Side of the (square) input patch in pixels.
    pub patch_px: usize,
    /// Start from 3-channel weights at `pretrained_weights` when available.
    pub pretrained_init: bool,
    pub pretrained_weights: Option<std::path::PathBuf>,
    pub channel_init: ChannelInit,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: "resnet50".into(),
            input_channels: 4,
            patch_px: crate::data::DEFAULT_PATCH_PX,
            pretrained_init: true,
            pretrained_weights: None,
            channel_init: ChannelInit::MeanRgb,
        }
    }
}

impl EncoderConfig {
    pub fn spec(&self) -> Result<BackboneSpec> {
        BackboneSpec::by_name(&self.backbone)
            .ok_or_else(|| Error::config("backbone", format!("unknown backbone `{}` (resnet50, resnet18, tiny)", self.backbone)))
    }

    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.spec()?.feature_dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        if self.input_channels != 4 {
            return Err(Error::config("input_channels", "only 4-band (R,G,B,N) input is supported"));
        }
        if self.patch_px == 0 {
            return Err(Error::config("patch_px", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalHeadConfig {
    pub sequence_length: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Width of the first fully connected layer.
    pub fc_hidden: usize,
    /// Drop probability on the final hidden state during training.
    pub dropout: f64,
}

impl Default for TemporalHeadConfig {
    fn default() -> Self {
        Self {
            sequence_length: 12,
            lstm_hidden: 512,
            lstm_layers: 1,
            fc_hidden: 256,
            dropout: 0.0,
        }
    }
}

impl TemporalHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 {
            return Err(Error::config("sequence_length", "must be positive"));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden", "must be positive"));
        }
        if self.lstm_layers == 0 {
            return Err(Error::config("lstm_layers", "must be positive"));
        }
        if self.fc_hidden == 0 {
            return Err(Error::config("fc_hidden", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Turn a 3-channel first convolution (`[out][3][k][k]`) into a 4-channel one.
/// The RGB kernels are copied; the fourth is their mean.
pub fn adapt_input_channels<T: Scalar>(rgb: &[T], out_c: usize, k: usize) -> Result<Vec<T>> {
    let per_in = k * k;
    if out_c == 0 || k == 0 || rgb.len() != out_c * 3 * per_in {
        return Err(Error::Shape(format!(
            "expected {out_c}x3x{k}x{k} = {} kernel weights, found {}",
            out_c * 3 * per_in,
            rgb.len()
        )));
    }
    let third = T::one() / T::from_usize_lossy(3);
    let mut out = Vec::with_capacity(out_c * 4 * per_in);
    for kernel in rgb.chunks_exact(3 * per_in) {
        out.extend_from_slice(kernel);
        let (r, rest) = kernel.split_at(per_in);
        let (g, b) = rest.split_at(per_in);
        out.extend((0..per_in).map(|i| (r[i] + g[i] + b[i]) * third));
    }
    Ok(out)
}
