//! Recurrent head over a sequence of per-month feature vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layers::{Init, Linear, LstmCache, LstmLayer, ParamAllocator};
use crate::scalar::Scalar;

/// Stacked LSTM; the top layer's final hidden state feeds FC → ReLU → FC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalHead {
    pub feature_dim: usize,
    pub lstm: Vec<LstmLayer>,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct TemporalCache<T> {
    layers: Vec<LstmCache<T>>,
    /// Final hidden state after dropout.
    last: Vec<T>,
    mask: Option<Vec<T>>,
    fc1_out: Vec<T>,
}

impl TemporalHead {
    pub fn new(
        alloc: &mut ParamAllocator,
        feature_dim: usize,
        hidden: usize,
        layers: usize,
        fc_hidden: usize,
        n_classes: usize,
    ) -> Self {
        let mut lstm = Vec::with_capacity(layers);
        let mut in_dim = feature_dim;
        for _ in 0..layers.max(1) {
            lstm.push(LstmLayer::new(alloc, in_dim, hidden));
            in_dim = hidden;
        }
        let fc1 = Linear::new(alloc, hidden, fc_hidden);
        let fc2 = Linear::new(alloc, fc_hidden, n_classes);
        Self {
            feature_dim,
            lstm,
            fc1,
            fc2,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm[0].hidden
    }

    pub fn init<T: Scalar, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        for l in &self.lstm {
            l.init(params, rng);
        }
        self.fc1.init(params, Init::He, rng);
        self.fc2.init(params, Init::Uniform, rng);
    }

    /// `mask` holds inverted-dropout multipliers for the final hidden state.
    pub fn forward<T: Scalar>(&self, params: &[T], seq: &[Vec<T>], mask: Option<Vec<T>>) -> (Vec<T>, TemporalCache<T>) {
        let mut layers = Vec::with_capacity(self.lstm.len());
        let mut inputs = seq.to_vec();
        for l in &self.lstm {
            let cache = l.forward(params, &inputs);
            inputs = cache.hiddens.clone();
            layers.push(cache);
        }
        let mut last = inputs.last().cloned().unwrap_or_else(|| vec![T::zero(); self.hidden()]);
        if let Some(m) = &mask {
            for (h, &k) in last.iter_mut().zip(m) {
                *h *= k;
            }
        }
        let mut fc1_out = self.fc1.forward(params, &last);
        fc1_out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let logits = self.fc2.forward(params, &fc1_out);
        (
            logits,
            TemporalCache {
                layers,
                last,
                mask,
                fc1_out,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, params: &[T], cache: &TemporalCache<T>, grad_logits: &[T], grads: &mut [T]) {
        let mut g = self.fc2.backward(params, &cache.fc1_out, grad_logits, grads);
        for (gv, &y) in g.iter_mut().zip(&cache.fc1_out) {
            if y <= T::zero() {
                *gv = T::zero();
            }
        }
        let mut g_last = self.fc1.backward(params, &cache.last, &g, grads);
        if let Some(m) = &cache.mask {
            for (gv, &k) in g_last.iter_mut().zip(m) {
                *gv *= k;
            }
        }
        let steps = cache.layers[0].inputs.len();
        let mut grad_h = vec![vec![T::zero(); self.hidden()]; steps];
        if steps > 0 {
            grad_h[steps - 1] = g_last;
        }
        for (l, lc) in self.lstm.iter().zip(&cache.layers).rev() {
            grad_h = l.backward(params, lc, &grad_h, grads);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stacked_head_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut alloc = ParamAllocator::new();
        let head = TemporalHead::new(&mut alloc, 3, 4, 2, 5, 3);
        let mut params = vec![0.0f64; alloc.len()];
        head.init(&mut params, &mut rng);
        let seq: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let mask = Some(vec![2.0, 0.0, 2.0, 2.0]);
        let probe = [0.5, -1.0, 2.0];
        let f = |p: &[f64]| head.forward(p, &seq, mask.clone()).0.iter().zip(probe).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = head.forward(&params, &seq, mask.clone());
        let mut grads = vec![0.0; params.len()];
        head.backward(&params, &cache, &probe, &mut grads);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let numeric = (up - f(&p)) / (2.0 * h);
            let scale = numeric.abs().max(grads[i].abs()).max(1e-4);
            assert!((numeric - grads[i]).abs() / scale < 1e-5, "param {i}: {numeric} vs {}", grads[i]);
        }
    }
}
