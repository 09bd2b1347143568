use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::artifact::{read_weights, weights_hash, write_weights, ArtifactKind, ArtifactMeta, CODE_VERSION};
use crate::models::{adapt_input_channels, ChannelInit, EncoderConfig};
use crate::nn::layers::{softmax, Init};
use crate::nn::{Act, AdamConfig, EncoderCache, Linear, ParamAllocator, ResidualEncoder};
use crate::ontology::{LabelDistribution, Level, Ontology};
use crate::preprocess::{normalize_patch, ChannelStats};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Residual encoder followed by a linear layer and softmax over one level's classes.
#[derive(Clone, Debug)]
pub struct MonoModel<T> {
    pub meta: ArtifactMeta,
    pub stats: ChannelStats,
    encoder: ResidualEncoder,
    head: Linear,
    params: Vec<T>,
}

pub(crate) struct MonoCache<T> {
    encoder: EncoderCache<T>,
    features: Vec<T>,
}

fn layout(config: &EncoderConfig, n_classes: usize) -> Result<(ResidualEncoder, Linear, usize)> {
    config.validate()?;
    let spec = config.spec()?;
    let mut alloc = ParamAllocator::new();
    let encoder = ResidualEncoder::new(&mut alloc, &spec, config.input_channels);
    let head = Linear::new(&mut alloc, spec.feature_dim(), n_classes);
    Ok((encoder, head, alloc.len()))
}

impl<T: Scalar> MonoModel<T> {
    /// Fresh weights drawn from `seed`; RGB weights from `config.pretrained_weights`
    /// are adapted into the first layer when `pretrained_init` is set.
    pub fn new(config: EncoderConfig, level: Level, stats: ChannelStats, seed: u64) -> Result<Self> {
        let n_classes = level.cardinality();
        let (encoder, head, n) = layout(&config, n_classes)?;
        let mut params = vec![T::zero(); n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.init(&mut params, &mut rng);
        head.init(&mut params, Init::Uniform, &mut rng);
        if config.pretrained_init {
            match &config.pretrained_weights {
                Some(path) => {
                    let rgb = read_weights::<T>(path)?;
                    load_rgb_encoder(&encoder, &mut params, &rgb, config.channel_init)?;
                }
                None => log::warn!("pretrained_init set but no pretrained_weights given; encoder starts from random weights"),
            }
        }
        let meta = ArtifactMeta {
            kind: ArtifactKind::Mono,
            level,
            n_classes,
            encoder: config,
            head: None,
            month: None,
            optimizer: AdamConfig::default(),
            seed,
            code_version: CODE_VERSION.to_string(),
            dtype: T::DTYPE.to_string(),
            encoder_hash: None,
            training: None,
        };
        Ok(Self {
            meta,
            stats,
            encoder,
            head,
            params,
        })
    }

    pub fn from_parts(meta: ArtifactMeta, stats: ChannelStats, params: Vec<T>) -> Result<Self> {
        if meta.kind != ArtifactKind::Mono {
            return Err(Error::Incompatible("artifact is not a mono-temporal model".into()));
        }
        if meta.n_classes != meta.level.cardinality() {
            return Err(Error::Incompatible(format!("{} classes recorded for {}", meta.n_classes, meta.level)));
        }
        let (encoder, head, n) = layout(&meta.encoder, meta.n_classes)?;
        if params.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: params.len(),
            });
        }
        Ok(Self {
            meta,
            stats,
            encoder,
            head,
            params,
        })
    }

    pub fn level(&self) -> Level {
        self.meta.level
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }

    pub fn patch_px(&self) -> usize {
        self.meta.encoder.patch_px
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn encoder_params(&self) -> &[T] {
        &self.params[..self.encoder.n_params()]
    }

    pub fn weights_hash(&self) -> String {
        weights_hash(&self.params)
    }

    /// Network input from an already normalized patch.
    pub fn input(&self, patch: &Raster<T>) -> Result<Act<T>> {
        let px = self.patch_px();
        if patch.height() != px || patch.width() != px || patch.channels() != self.meta.encoder.input_channels {
            return Err(Error::Shape(format!(
                "expected a {px}x{px}x{} patch, found {}x{}x{}",
                self.meta.encoder.input_channels,
                patch.height(),
                patch.width(),
                patch.channels()
            )));
        }
        Ok(Act {
            c: patch.channels(),
            h: patch.height(),
            w: patch.width(),
            data: patch.to_chw(),
        })
    }

    /// Network input from a raw reflectance patch, normalized with the model's statistics.
    pub fn input_raw(&self, patch: &Raster<f32>) -> Result<Act<T>> {
        self.input(&normalize_patch(&patch.cast::<T>(), &self.stats)?)
    }

    pub fn features(&self, x: &Act<T>) -> Vec<T> {
        self.encoder.features(&self.params, x)
    }

    pub fn distribution(&self, logits: &[T]) -> LabelDistribution<T> {
        LabelDistribution::new(self.level(), softmax(logits)).expect("softmax output is a distribution")
    }

    pub fn head_logits(&self, features: &[T]) -> Vec<T> {
        self.head.forward(&self.params, features)
    }

    /// Predicted distribution for one normalized patch.
    pub fn mono_forward(&self, patch: &Raster<T>) -> Result<LabelDistribution<T>> {
        let x = self.input(patch)?;
        Ok(self.distribution(&self.head_logits(&self.features(&x))))
    }

    /// Predicted distributions for raw patches, in input order.
    pub fn predict_batch(&self, patches: &[Raster<f32>]) -> Result<Vec<LabelDistribution<T>>> {
        patches
            .par_iter()
            .map(|p| {
                let x = self.input_raw(p)?;
                Ok(self.distribution(&self.head_logits(&self.features(&x))))
            })
            .collect()
    }

    pub(crate) fn forward_cached(&self, x: &Act<T>) -> (Vec<T>, MonoCache<T>) {
        let (features, encoder) = self.encoder.forward(&self.params, x);
        let logits = self.head_logits(&features);
        (logits, MonoCache { encoder, features })
    }

    pub(crate) fn backward(&self, cache: &MonoCache<T>, grad_logits: &[T], grads: &mut [T]) {
        let g = self.head.backward(&self.params, &cache.features, grad_logits, grads);
        self.encoder.backward(&self.params, &cache.encoder, &g, grads);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.meta.save(dir)?;
        write_weights(&dir.join("weights.bin"), &self.params)?;
        self.stats.save(&dir.join("stats.json"))?;
        let onto = dir.join("ontology.json");
        fs::write(&onto, Ontology::builtin().to_json()).map_err(|e| Error::io(&onto, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = ArtifactMeta::load(dir)?;
        let stats = ChannelStats::load(&dir.join("stats.json"))?;
        let params = read_weights(&dir.join("weights.bin"))?;
        Self::from_parts(meta, stats, params)
    }
}

/// Copy a 3-channel encoder's weights into a 4-channel one of the same backbone.
fn load_rgb_encoder<T: Scalar>(encoder: &ResidualEncoder, params: &mut [T], rgb: &[T], init: ChannelInit) -> Result<()> {
    let stem = &encoder.stem;
    let kk = stem.k * stem.k;
    let rgb_stem = stem.out_c * 3 * kk;
    let expected = encoder.n_params() - stem.out_c * kk;
    if rgb.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: rgb.len(),
        });
    }
    let w = &mut params[stem.weight.clone()];
    match init {
        ChannelInit::MeanRgb => w.copy_from_slice(&adapt_input_channels(&rgb[..rgb_stem], stem.out_c, stem.k)?),
        ChannelInit::Random => {
            for oc in 0..stem.out_c {
                w[oc * 4 * kk..oc * 4 * kk + 3 * kk].copy_from_slice(&rgb[oc * 3 * kk..(oc + 1) * 3 * kk]);
            }
        }
    }
    params[stem.bias.start..encoder.n_params()].copy_from_slice(&rgb[rgb_stem..]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            backbone: "tiny".into(),
            patch_px: 8,
            pretrained_init: false,
            ..EncoderConfig::default()
        }
    }

    fn unit_stats() -> ChannelStats {
        ChannelStats {
            mean: [0.0; 4],
            std: [1.0; 4],
            n_pixels: 1,
        }
    }

    fn random_patch(seed: u64, px: usize) -> Raster<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::new(px, px, 4, (0..px * px * 4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn outputs_lie_in_simplex_and_repeat() {
        let model = MonoModel::<f64>::new(tiny_config(), Level::Level2, unit_stats(), 3).unwrap();
        for s in 0..5 {
            let p = random_patch(s, 8);
            let d = model.mono_forward(&p).unwrap();
            assert_eq!(d.probs().len(), 15);
            assert!(d.probs().iter().all(|&v| v >= 0.0));
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(model.mono_forward(&p).unwrap(), d);
        }
        assert!(model.mono_forward(&random_patch(0, 9)).is_err());
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let model = MonoModel::<f32>::new(tiny_config(), Level::Level1, unit_stats(), 5).unwrap();
        let p = random_patch(1, 8).cast::<f32>();
        let q = random_patch(2, 8).cast::<f32>();
        let out = model.predict_batch(&[p.clone(), q, p.clone()]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_eq!(out[0], model.mono_forward(&p).unwrap());
    }

    #[test]
    fn feature_length_matches_config() {
        let model = MonoModel::<f32>::new(tiny_config(), Level::Level2, unit_stats(), 1).unwrap();
        let x = model.input(&random_patch(4, 8).cast()).unwrap();
        assert_eq!(model.features(&x).len(), model.meta.encoder.feature_dim().unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = MonoModel::<f32>::new(tiny_config(), Level::Level1_5, unit_stats(), 9).unwrap();
        model.save(dir.path()).unwrap();
        for f in ["config.json", "weights.bin", "stats.json", "ontology.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = MonoModel::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.meta, model.meta);
        assert_eq!(back.weights_hash(), model.weights_hash());
        let p = random_patch(7, 8).cast::<f32>();
        assert_eq!(back.mono_forward(&p).unwrap(), model.mono_forward(&p).unwrap());
    }

    #[test]
    fn pretrained_rgb_weights_are_adapted() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let spec = config.spec().unwrap();
        let mut alloc = ParamAllocator::new();
        let rgb_enc = ResidualEncoder::new(&mut alloc, &spec, 3);
        let mut rgb = vec![0.0f64; rgb_enc.n_params()];
        rgb_enc.init(&mut rgb, &mut ChaCha8Rng::seed_from_u64(2));
        let path = dir.path().join("rgb.bin");
        write_weights(&path, &rgb).unwrap();
        let model = MonoModel::<f64>::new(
            EncoderConfig {
                pretrained_init: true,
                pretrained_weights: Some(path),
                ..config
            },
            Level::Level2,
            unit_stats(),
            0,
        )
        .unwrap();
        let stem = &model.encoder.stem;
        let kk = stem.k * stem.k;
        let w = &model.params[stem.weight.clone()];
        for oc in 0..stem.out_c {
            let src = &rgb[oc * 3 * kk..(oc + 1) * 3 * kk];
            let dst = &w[oc * 4 * kk..(oc + 1) * 4 * kk];
            assert_eq!(&dst[..3 * kk], src);
            for i in 0..kk {
                let mean = (src[i] + src[kk + i] + src[2 * kk + i]) / 3.0;
                assert!((dst[3 * kk + i] - mean).abs() < 1e-15);
            }
        }
        let tail = &rgb[stem.out_c * 3 * kk..];
        assert_eq!(&model.params[stem.bias.start..model.encoder.n_params()], tail);
    }
}
