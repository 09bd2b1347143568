//! Residual convolutional encoder (ResNet family) ending in global average pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layers::{max_pool_backward, max_pool_forward, Act, Conv2d, ParamAllocator};
use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (×4).
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// Architecture of a residual backbone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub block: BlockKind,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 3×3 stride-2 max pooling after the stem.
    pub stem_pool: bool,
    pub stage_widths: Vec<usize>,
    pub stage_blocks: Vec<usize>,
}

impl BackboneSpec {
    /// The 50-layer bottleneck network (2048-d features).
    pub fn resnet50() -> Self {
        Self {
            name: "resnet50".into(),
            block: BlockKind::Bottleneck,
            stem_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_widths: vec![64, 128, 256, 512],
            stage_blocks: vec![3, 4, 6, 3],
        }
    }

    /// The 18-layer basic-block network (512-d features).
    pub fn resnet18() -> Self {
        Self {
            name: "resnet18".into(),
            block: BlockKind::Basic,
            stem_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_widths: vec![64, 128, 256, 512],
            stage_blocks: vec![2, 2, 2, 2],
        }
    }

    /// Two-stage network for small patches and CPU-only runs.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            block: BlockKind::Basic,
            stem_width: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            stage_widths: vec![16, 32],
            stage_blocks: vec![1, 1],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "resnet50" => Some(Self::resnet50()),
            "resnet18" => Some(Self::resnet18()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(self.stem_width) * self.block.expansion()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResidualBlock {
    convs: Vec<Conv2d>,
    shortcut: Option<Conv2d>,
}

struct BlockCache<T> {
    /// `acts[0]` is the block input, `acts[i]` the ReLU output of conv `i-1`.
    acts: Vec<Act<T>>,
    out: Act<T>,
}

impl ResidualBlock {
    fn new(alloc: &mut ParamAllocator, kind: BlockKind, in_c: usize, width: usize, stride: usize) -> Self {
        let out_c = width * kind.expansion();
        let convs = match kind {
            BlockKind::Basic => vec![
                Conv2d::new(alloc, in_c, width, 3, stride, 1),
                Conv2d::new(alloc, width, width, 3, 1, 1),
            ],
            BlockKind::Bottleneck => vec![
                Conv2d::new(alloc, in_c, width, 1, 1, 0),
                Conv2d::new(alloc, width, width, 3, stride, 1),
                Conv2d::new(alloc, width, out_c, 1, 1, 0),
            ],
        };
        let shortcut = (stride != 1 || in_c != out_c).then(|| Conv2d::new(alloc, in_c, out_c, 1, stride, 0));
        Self { convs, shortcut }
    }

    fn init<T: Scalar, R: Rng>(&self, params: &mut [T], branch_gain: f64, rng: &mut R) {
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            conv.init(params, if i == last { branch_gain } else { 1.0 }, rng);
        }
        if let Some(sc) = &self.shortcut {
            sc.init(params, 0.5f64.sqrt(), rng);
        }
    }

    fn forward<T: Scalar>(&self, params: &[T], x: Act<T>) -> BlockCache<T> {
        let mut acts = vec![x];
        let last = self.convs.len() - 1;
        let mut branch = None;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(params, &acts[i]);
            if i < last {
                y.relu_inplace();
                acts.push(y);
            } else {
                branch = Some(y);
            }
        }
        let mut out = branch.expect("block has convolutions");
        match &self.shortcut {
            Some(sc) => out.add_assign(&sc.forward(params, &acts[0])),
            None => out.add_assign(&acts[0]),
        }
        out.relu_inplace();
        BlockCache { acts, out }
    }

    fn backward<T: Scalar>(&self, params: &[T], cache: &BlockCache<T>, mut g: Act<T>, grads: &mut [T]) -> Act<T> {
        g.relu_mask(&cache.out);
        let mut gx = match &self.shortcut {
            Some(sc) => sc.backward(params, &cache.acts[0], &g, grads),
            None => g.clone(),
        };
        let mut gb = g;
        for i in (0..self.convs.len()).rev() {
            gb = self.convs[i].backward(params, &cache.acts[i], &gb, grads);
            if i > 0 {
                gb.relu_mask(&cache.acts[i]);
            }
        }
        gx.add_assign(&gb);
        gx
    }
}

/// Forward-pass state needed by [`ResidualEncoder::backward`].
pub struct EncoderCache<T> {
    input: Act<T>,
    stem_out: Act<T>,
    pool_argmax: Option<Vec<usize>>,
    blocks: Vec<BlockCache<T>>,
    final_shape: (usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEncoder {
    pub spec: BackboneSpec,
    pub in_channels: usize,
    pub stem: Conv2d,
    blocks: Vec<ResidualBlock>,
    n_params: usize,
}

impl ResidualEncoder {
    /// Lays out the encoder's parameters starting at the allocator's current offset.
    pub fn new(alloc: &mut ParamAllocator, spec: &BackboneSpec, in_channels: usize) -> Self {
        let start = alloc.len();
        let stem = Conv2d::new(alloc, in_channels, spec.stem_width, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2);
        let mut blocks = Vec::new();
        let mut c = spec.stem_width;
        for (s, (&width, &n)) in spec.stage_widths.iter().zip(&spec.stage_blocks).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(alloc, spec.block, c, width, stride));
                c = width * spec.block.expansion();
            }
        }
        Self {
            spec: spec.clone(),
            in_channels,
            stem,
            blocks,
            n_params: alloc.len() - start,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    pub fn init<T: Scalar, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        self.stem.init(params, 1.0, rng);
        let gain = 1.0 / (self.blocks.len().max(1) as f64).sqrt();
        for b in &self.blocks {
            b.init(params, gain, rng);
        }
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &Act<T>) -> (Vec<T>, EncoderCache<T>) {
        let mut stem_out = self.stem.forward(params, x);
        stem_out.relu_inplace();
        let (mut h, pool_argmax) = if self.spec.stem_pool {
            let (p, arg) = max_pool_forward(&stem_out);
            (p, Some(arg))
        } else {
            (stem_out.clone(), None)
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let cache = b.forward(params, h);
            h = cache.out.clone();
            caches.push(cache);
        }
        let features = h.global_avg_pool();
        let cache = EncoderCache {
            input: x.clone(),
            stem_out,
            pool_argmax,
            blocks: caches,
            final_shape: (h.c, h.h, h.w),
        };
        (features, cache)
    }

    /// Pooled features only.
    pub fn features<T: Scalar>(&self, params: &[T], x: &Act<T>) -> Vec<T> {
        self.forward(params, x).0
    }

    pub fn backward<T: Scalar>(&self, params: &[T], cache: &EncoderCache<T>, grad_features: &[T], grads: &mut [T]) {
        let (c, h, w) = cache.final_shape;
        let mut g = Act::global_avg_pool_backward(grad_features, c, h, w);
        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(params, bc, g, grads);
        }
        if let Some(arg) = &cache.pool_argmax {
            let s = &cache.stem_out;
            g = max_pool_backward(&g, arg, (s.c, s.h, s.w));
        }
        g.relu_mask(&cache.stem_out);
        self.stem.backward(params, &cache.input, &g, grads);
    }
}
