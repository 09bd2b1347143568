//! Layers with explicit forward and backward passes over a flat parameter buffer.
//!
//! A layer owns only the index ranges of its parameters. Forward passes read
//! from a `&[T]` holding every parameter of the model; backward passes
//! accumulate into a gradient buffer of the same length.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Hands out consecutive ranges of the flat parameter vector.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    len: usize,
}

impl ParamAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.len..self.len + n;
        self.len += n;
        r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Channel-first activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn relu_inplace(&mut self) {
        for v in self.data.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }

    /// Zero gradient entries where the post-activation value was clamped.
    pub fn relu_mask(&mut self, post: &Act<T>) {
        for (g, &y) in self.data.iter_mut().zip(&post.data) {
            if y <= T::zero() {
                *g = T::zero();
            }
        }
    }

    pub fn add_assign(&mut self, other: &Act<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn global_avg_pool(&self) -> Vec<T> {
        let plane = self.h * self.w;
        let inv = T::one() / T::from_usize_lossy(plane);
        self.data.chunks_exact(plane).map(|ch| ch.iter().copied().sum::<T>() * inv).collect()
    }

    pub fn global_avg_pool_backward(grad: &[T], c: usize, h: usize, w: usize) -> Self {
        let plane = h * w;
        let inv = T::one() / T::from_usize_lossy(plane);
        let mut data = Vec::with_capacity(c * plane);
        for &g in grad {
            data.extend(std::iter::repeat(g * inv).take(plane));
        }
        Self { c, h, w, data }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)` times a gain.
    He,
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform,
}

pub(crate) fn fill_normal<T: Scalar, R: Rng>(out: &mut [T], std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
    for v in out {
        *v = T::from_f64_lossy(normal.sample(rng));
    }
}

pub(crate) fn fill_uniform<T: Scalar, R: Rng>(out: &mut [T], bound: f64, rng: &mut R) {
    if bound == 0.0 {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let u = Uniform::new(-bound, bound).expect("valid bounds");
    for v in out {
        *v = T::from_f64_lossy(u.sample(rng));
    }
}

/// 2-D convolution with square kernels; weights laid out `[out][in][k][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl Conv2d {
    pub fn new(alloc: &mut ParamAllocator, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        let weight = alloc.take(out_c * in_c * k * k);
        let bias = alloc.take(out_c);
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn init<T: Scalar, R: Rng>(&self, params: &mut [T], gain: f64, rng: &mut R) {
        let std = gain * (2.0 / self.fan_in() as f64).sqrt();
        fill_normal(&mut params[self.weight.clone()], std, rng);
        params[self.bias.clone()].iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output columns `ox` for which `ox*stride + kx - pad` falls inside `[0, w)`.
    fn valid_range(&self, kx: usize, w: usize, out_w: usize) -> Range<usize> {
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        // largest ox with ox*stride + kx - pad <= w - 1
        let hi = if w + self.pad > kx {
            ((w - 1 + self.pad - kx) / self.stride + 1).min(out_w)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &Act<T>) -> Act<T> {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut y = Act::zeros(self.out_c, oh, ow);
        let wts = &params[self.weight.clone()];
        let bias = &params[self.bias.clone()];
        let k = self.k;
        let s = self.stride;
        let cols: Vec<Range<usize>> = (0..k).map(|kx| self.valid_range(kx, x.w, ow)).collect();
        let rows: Vec<Range<usize>> = (0..k).map(|ky| self.valid_range(ky, x.h, oh)).collect();
        for oc in 0..self.out_c {
            let out = &mut y.data[oc * oh * ow..(oc + 1) * oh * ow];
            out.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..self.in_c {
                let inp = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wts[((oc * self.in_c + ic) * k + ky) * k + kx];
                        for oy in rows[ky].clone() {
                            let iy = oy * s + ky - self.pad;
                            let in_row = &inp[iy * x.w..(iy + 1) * x.w];
                            let out_row = &mut out[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let r = cols[kx].clone();
                                let off = kx as isize - self.pad as isize;
                                let src = &in_row[(r.start as isize + off) as usize..(r.end as isize + off) as usize];
                                for (o, &i) in out_row[r].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in cols[kx].clone() {
                                    out_row[ox] += wv * in_row[ox * s + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward<T: Scalar>(&self, params: &[T], x: &Act<T>, gy: &Act<T>, grads: &mut [T]) -> Act<T> {
        let (oh, ow) = (gy.h, gy.w);
        let mut gx = Act::zeros(x.c, x.h, x.w);
        let wts = &params[self.weight.clone()];
        let k = self.k;
        let s = self.stride;
        let cols: Vec<Range<usize>> = (0..k).map(|kx| self.valid_range(kx, x.w, ow)).collect();
        let rows: Vec<Range<usize>> = (0..k).map(|ky| self.valid_range(ky, x.h, oh)).collect();
        for oc in 0..self.out_c {
            let g = &gy.data[oc * oh * ow..(oc + 1) * oh * ow];
            grads[self.bias.start + oc] += g.iter().copied().sum::<T>();
            for ic in 0..self.in_c {
                let inp = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
                let gin = &mut gx.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((oc * self.in_c + ic) * k + ky) * k + kx;
                        let wv = wts[widx];
                        let mut gw = T::zero();
                        for oy in rows[ky].clone() {
                            let iy = oy * s + ky - self.pad;
                            let g_row = &g[oy * ow..(oy + 1) * ow];
                            for ox in cols[kx].clone() {
                                let ix = ox * s + kx - self.pad;
                                let gv = g_row[ox];
                                gw += gv * inp[iy * x.w + ix];
                                gin[iy * x.w + ix] += wv * gv;
                            }
                        }
                        grads[self.weight.start + widx] += gw;
                    }
                }
            }
        }
        gx
    }
}

/// 3×3, stride 2, padding 1 max pooling.
pub fn max_pool_forward<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<usize>) {
    let oh = (x.h + 2 - 3) / 2 + 1;
    let ow = (x.w + 2 - 3) / 2 + 1;
    let mut y = Act::zeros(x.c, oh, ow);
    let mut argmax = vec![0usize; x.c * oh * ow];
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                            continue;
                        }
                        let idx = (c * x.h + iy as usize) * x.w + ix as usize;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                y.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (y, argmax)
}

pub fn max_pool_backward<T: Scalar>(gy: &Act<T>, argmax: &[usize], in_shape: (usize, usize, usize)) -> Act<T> {
    let mut gx = Act::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (g, &i) in gy.data.iter().zip(argmax) {
        gx.data[i] += *g;
    }
    gx
}

/// Dense layer; weights laid out `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl Linear {
    pub fn new(alloc: &mut ParamAllocator, in_dim: usize, out_dim: usize) -> Self {
        let weight = alloc.take(in_dim * out_dim);
        let bias = alloc.take(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, params: &mut [T], init: Init, rng: &mut R) {
        match init {
            Init::He => fill_normal(&mut params[self.weight.clone()], (2.0 / self.in_dim as f64).sqrt(), rng),
            Init::Uniform => fill_uniform(&mut params[self.weight.clone()], 1.0 / (self.in_dim as f64).sqrt(), rng),
        }
        params[self.bias.clone()].iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        let w = &params[self.weight.clone()];
        let b = &params[self.bias.clone()];
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    pub fn backward<T: Scalar>(&self, params: &[T], x: &[T], gy: &[T], grads: &mut [T]) -> Vec<T> {
        let w = &params[self.weight.clone()];
        let mut gx = vec![T::zero(); self.in_dim];
        for (o, &g) in gy.iter().enumerate() {
            grads[self.bias.start + o] += g;
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads[self.weight.start + o * self.in_dim..self.weight.start + (o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Single LSTM layer with gate order (input, forget, cell, output) and one bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub in_dim: usize,
    pub hidden: usize,
    pub w_ih: Range<usize>,
    pub w_hh: Range<usize>,
    pub bias: Range<usize>,
}

/// Per-step values kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub inputs: Vec<Vec<T>>,
    /// Activated gates per step, `[i | f | g | o]`.
    gates: Vec<Vec<T>>,
    cells: Vec<Vec<T>>,
    pub hiddens: Vec<Vec<T>>,
}

impl LstmLayer {
    pub fn new(alloc: &mut ParamAllocator, in_dim: usize, hidden: usize) -> Self {
        let w_ih = alloc.take(4 * hidden * in_dim);
        let w_hh = alloc.take(4 * hidden * hidden);
        let bias = alloc.take(4 * hidden);
        Self {
            in_dim,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        fill_uniform(&mut params[self.w_ih.clone()], bound, rng);
        fill_uniform(&mut params[self.w_hh.clone()], bound, rng);
        let h = self.hidden;
        let b = &mut params[self.bias.clone()];
        b.iter_mut().for_each(|v| *v = T::zero());
        // forget gate starts open
        b[h..2 * h].iter_mut().for_each(|v| *v = T::one());
    }

    pub fn forward<T: Scalar>(&self, params: &[T], inputs: &[Vec<T>]) -> LstmCache<T> {
        let h = self.hidden;
        let w_ih = &params[self.w_ih.clone()];
        let w_hh = &params[self.w_hh.clone()];
        let bias = &params[self.bias.clone()];
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        let mut cache = LstmCache {
            inputs: inputs.to_vec(),
            gates: Vec::with_capacity(inputs.len()),
            cells: Vec::with_capacity(inputs.len()),
            hiddens: Vec::with_capacity(inputs.len()),
        };
        for x in inputs {
            let mut z = bias.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let wi = &w_ih[r * self.in_dim..(r + 1) * self.in_dim];
                let wh = &w_hh[r * h..(r + 1) * h];
                *zr += wi.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
                    + wh.iter().zip(&h_prev).map(|(&a, &b)| a * b).sum::<T>();
            }
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = z[2 * h + j].tanh();
                z[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            let c: Vec<T> = (0..h).map(|j| z[h + j] * c_prev[j] + z[j] * z[2 * h + j]).collect();
            let hn: Vec<T> = (0..h).map(|j| z[3 * h + j] * c[j].tanh()).collect();
            cache.gates.push(z);
            cache.cells.push(c.clone());
            cache.hiddens.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        cache
    }

    /// `grad_h[t]` is the loss gradient arriving at step `t`'s hidden output.
    /// Returns the gradient for every input step.
    pub fn backward<T: Scalar>(&self, params: &[T], cache: &LstmCache<T>, grad_h: &[Vec<T>], grads: &mut [T]) -> Vec<Vec<T>> {
        let h = self.hidden;
        let steps = cache.inputs.len();
        let w_ih = &params[self.w_ih.clone()];
        let w_hh = &params[self.w_hh.clone()];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dxs = vec![Vec::new(); steps];
        let zeros = vec![T::zero(); h];
        for t in (0..steps).rev() {
            let g = &cache.gates[t];
            let c = &cache.cells[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &cache.hiddens[t - 1] } else { &zeros };
            let mut dz = vec![T::zero(); 4 * h];
            let mut dc_prev = vec![T::zero(); h];
            for j in 0..h {
                let dh = grad_h[t][j] + dh_next[j];
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
                dz[j] = dc * gg * i * (T::one() - i);
                dz[h + j] = dc * c_prev[j] * f * (T::one() - f);
                dz[2 * h + j] = dc * i * (T::one() - gg * gg);
                dz[3 * h + j] = dh * tc * o * (T::one() - o);
                dc_prev[j] = dc * f;
            }
            let x = &cache.inputs[t];
            let mut dx = vec![T::zero(); self.in_dim];
            let mut dh_prev = vec![T::zero(); h];
            for (r, &d) in dz.iter().enumerate() {
                grads[self.bias.start + r] += d;
                let wi = &w_ih[r * self.in_dim..(r + 1) * self.in_dim];
                let gi = self.w_ih.start + r * self.in_dim;
                for k in 0..self.in_dim {
                    grads[gi + k] += d * x[k];
                    dx[k] += d * wi[k];
                }
                let wh = &w_hh[r * h..(r + 1) * h];
                let gh = self.w_hh.start + r * h;
                for k in 0..h {
                    grads[gh + k] += d * h_prev[k];
                    dh_prev[k] += d * wh[k];
                }
            }
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    logits.iter().map(|&z| z - lse).collect()
}

/// Chain a gradient w.r.t. softmax outputs back to the logits.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_probs).map(|(&p, &g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(&p, &g)| p * (g - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    /// Central-difference check of `loss(params)` against the analytic gradient.
    fn check_grad(params: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) {
        let h = 1e-6;
        let mut p = params.to_vec();
        for i in 0..params.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(analytic[i].abs()).max(1e-3);
            assert!(
                (numeric - analytic[i]).abs() / scale < 1e-5,
                "param {i}: numeric {numeric} vs analytic {}",
                analytic[i]
            );
        }
    }

    // Weighted sum of outputs makes every output position matter.
    fn probe(y: &Act<f64>) -> f64 {
        y.data.iter().enumerate().map(|(i, v)| v * (1.0 + (i % 7) as f64 * 0.1)).sum()
    }

    fn probe_grad(y: &Act<f64>) -> Act<f64> {
        Act {
            c: y.c,
            h: y.h,
            w: y.w,
            data: (0..y.data.len()).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect(),
        }
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (5, 1, 2), (7, 2, 3)] {
            let mut alloc = ParamAllocator::new();
            let conv = Conv2d::new(&mut alloc, 2, 3, k, s, p);
            let params = random_vec(alloc.len(), &mut rng);
            let x = Act { c: 2, h: 9, w: 7, data: random_vec(2 * 9 * 7, &mut rng) };
            let y = conv.forward(&params, &x);
            let (oh, ow) = conv.out_hw(9, 7);
            for oc in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = params[conv.bias.start + oc];
                        for ic in 0..2 {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && iy < 9 && ix < 7 {
                                        acc += params[conv.weight.start + ((oc * 2 + ic) * k + ky) * k + kx]
                                            * x.data[(ic * 9 + iy as usize) * 7 + ix as usize];
                                    }
                                }
                            }
                        }
                        assert!((y.data[(oc * oh + oy) * ow + ox] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let mut alloc = ParamAllocator::new();
            let conv = Conv2d::new(&mut alloc, 2, 2, k, s, p);
            let params = random_vec(alloc.len(), &mut rng);
            let x = Act { c: 2, h: 5, w: 6, data: random_vec(60, &mut rng) };
            let y = conv.forward(&params, &x);
            let mut grads = vec![0.0; params.len()];
            let gx = conv.backward(&params, &x, &probe_grad(&y), &mut grads);
            check_grad(&params, &grads, |p| probe(&conv.forward(p, &x)));
            check_grad(&x.data, &gx.data, |d| {
                probe(&conv.forward(&params, &Act { data: d.to_vec(), ..x.clone() }))
            });
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut alloc = ParamAllocator::new();
        let lin = Linear::new(&mut alloc, 5, 3);
        let params = random_vec(alloc.len(), &mut rng);
        let x = random_vec(5, &mut rng);
        let weights = [0.3, -1.2, 0.7];
        let f = |p: &[f64], x: &[f64]| lin.forward(p, x).iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        let mut grads = vec![0.0; params.len()];
        let gx = lin.backward(&params, &x, &weights, &mut grads);
        check_grad(&params, &grads, |p| f(p, &x));
        check_grad(&x, &gx, |xx| f(&params, xx));
    }

    #[test]
    fn lstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut alloc = ParamAllocator::new();
        let lstm = LstmLayer::new(&mut alloc, 3, 4);
        let params = random_vec(alloc.len(), &mut rng);
        let inputs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(3, &mut rng)).collect();
        let probe_w: Vec<Vec<f64>> = (0..5).map(|_| random_vec(4, &mut rng)).collect();
        let f = |p: &[f64], xs: &[Vec<f64>]| -> f64 {
            let cache = lstm.forward(p, xs);
            cache.hiddens.iter().zip(&probe_w).map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let cache = lstm.forward(&params, &inputs);
        let mut grads = vec![0.0; params.len()];
        let dxs = lstm.backward(&params, &cache, &probe_w, &mut grads);
        check_grad(&params, &grads, |p| f(p, &inputs));
        let flat: Vec<f64> = inputs.concat();
        check_grad(&flat, &dxs.concat(), |d| {
            let xs: Vec<Vec<f64>> = d.chunks(3).map(|c| c.to_vec()).collect();
            f(&params, &xs)
        });
    }

    #[test]
    fn max_pool_gradient_routes_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Act { c: 2, h: 6, w: 5, data: random_vec(60, &mut rng) };
        let (y, arg) = max_pool_forward(&x);
        assert_eq!((y.h, y.w), (3, 3));
        let gx = max_pool_backward(&probe_grad(&y), &arg, (2, 6, 5));
        check_grad(&x.data, &gx.data, |d| probe(&max_pool_forward(&Act { data: d.to_vec(), ..x.clone() }).0));
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[1000.0f64, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
        let z = [0.3f64, -0.2, 1.5, 0.0];
        let ls = log_softmax(&z);
        for (a, b) in ls.iter().zip(softmax(&z)) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = [0.3f64, -0.2, 1.5, 0.0];
        let w = [1.0, -2.0, 0.5, 3.0];
        let f = |z: &[f64]| softmax(z).iter().zip(w).map(|(p, w)| p * w).sum::<f64>();
        let g = softmax_backward(&softmax(&z), &w);
        check_grad(&z, &g, f);
    }
}
