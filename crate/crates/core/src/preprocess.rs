//! Per-band standardization with statistics gathered over the training rasters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

pub const BANDS: usize = 4;
/// Floor applied to a band's standard deviation.
pub const STD_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; BANDS],
    /// Population standard deviation, at least [`STD_EPSILON`].
    pub std: [f64; BANDS],
    pub n_pixels: u64,
}

impl ChannelStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: ChannelStats = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if stats.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("std", "standard deviations must be positive"));
        }
        Ok(stats)
    }
}

/// Mergeable running moments (count, mean, sum of squared deviations) per band.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsAccumulator {
    n: u64,
    mean: [f64; BANDS],
    m2: [f64; BANDS],
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Fold one raster in: exact two-pass moments for the raster, then a pairwise merge.
    pub fn push<T: Scalar>(&mut self, raster: &Raster<T>) -> Result<()> {
        if raster.channels() != BANDS {
            return Err(Error::Shape(format!("expected {BANDS} bands, found {}", raster.channels())));
        }
        let n = (raster.height() * raster.width()) as u64;
        if n == 0 {
            return Ok(());
        }
        let mut mean = [0.0; BANDS];
        for px in raster.data().chunks_exact(BANDS) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v.as_f64();
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut m2 = [0.0; BANDS];
        for px in raster.data().chunks_exact(BANDS) {
            for c in 0..BANDS {
                let d = px[c].as_f64() - mean[c];
                m2[c] += d * d;
            }
        }
        self.merge(&StatsAccumulator { n, mean, m2 });
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        for c in 0..BANDS {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * nb / n as f64;
            self.m2[c] += other.m2[c] + delta * delta * na * nb / n as f64;
        }
        self.n = n;
    }

    pub fn finish(&self) -> Result<ChannelStats> {
        if self.n == 0 {
            return Err(Error::Empty("no training pixels for channel statistics".into()));
        }
        let mut std = [0.0; BANDS];
        for c in 0..BANDS {
            let s = (self.m2[c] / self.n as f64).sqrt();
            std[c] = if s < STD_EPSILON {
                log::warn!("band {c} has zero variance; clamping its std to {STD_EPSILON}");
                STD_EPSILON
            } else {
                s
            };
        }
        Ok(ChannelStats {
            mean: self.mean,
            std,
            n_pixels: self.n,
        })
    }
}

pub fn compute_channel_stats<'a, T: Scalar>(patches: impl IntoIterator<Item = &'a Raster<T>>) -> Result<ChannelStats> {
    let mut acc = StatsAccumulator::new();
    for p in patches {
        acc.push(p)?;
    }
    acc.finish()
}

/// `(x - mean) / std` per band.
pub fn normalize_patch<T: Scalar>(raster: &Raster<T>, stats: &ChannelStats) -> Result<Raster<T>> {
    if raster.channels() != BANDS {
        return Err(Error::Shape(format!("expected {BANDS} bands, found {}", raster.channels())));
    }
    let mean: [T; BANDS] = std::array::from_fn(|c| T::from_f64_lossy(stats.mean[c]));
    let inv: [T; BANDS] = std::array::from_fn(|c| T::from_f64_lossy(1.0 / stats.std[c]));
    let mut out = raster.clone();
    for px in out.data_mut().chunks_exact_mut(BANDS) {
        for c in 0..BANDS {
            px[c] = (px[c] - mean[c]) * inv[c];
        }
    }
    Ok(out)
}

pub fn denormalize_patch<T: Scalar>(raster: &Raster<T>, stats: &ChannelStats) -> Result<Raster<T>> {
    if raster.channels() != BANDS {
        return Err(Error::Shape(format!("expected {BANDS} bands, found {}", raster.channels())));
    }
    let mut out = raster.clone();
    for px in out.data_mut().chunks_exact_mut(BANDS) {
        for c in 0..BANDS {
            px[c] = px[c] * T::from_f64_lossy(stats.std[c]) + T::from_f64_lossy(stats.mean[c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rasters(seed: u64, n: usize) -> Vec<Raster<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let side = 3 + i % 4;
                let data = (0..side * side * 4).map(|k| rng.random::<f64>() * (1.0 + (k % 4) as f64)).collect();
                Raster::new(side, side, 4, data).unwrap()
            })
            .collect()
    }

    // Independent route: one pass for the mean, a second for the variance.
    fn two_pass(rasters: &[Raster<f64>]) -> ([f64; 4], [f64; 4]) {
        let mut sum = [0.0; 4];
        let mut n = 0.0;
        for r in rasters {
            for px in r.data().chunks(4) {
                for c in 0..4 {
                    sum[c] += px[c];
                }
                n += 1.0;
            }
        }
        let mean = sum.map(|s| s / n);
        let mut var = [0.0; 4];
        for r in rasters {
            for px in r.data().chunks(4) {
                for c in 0..4 {
                    var[c] += (px[c] - mean[c]).powi(2);
                }
            }
        }
        (mean, var.map(|v| (v / n).sqrt()))
    }

    #[test]
    fn constant_corpus_clamps_std() {
        let r = Raster::new(2, 2, 4, vec![0.5f32; 16]).unwrap();
        let s = compute_channel_stats([&r, &r]).unwrap();
        assert_eq!(s.mean, [0.5; 4]);
        assert_eq!(s.std, [STD_EPSILON; 4]);
        assert_eq!(s.n_pixels, 8);
    }

    #[test]
    fn two_pixel_corpus() {
        let r = Raster::new(1, 2, 4, vec![0.0f64, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = compute_channel_stats([&r]).unwrap();
        assert_eq!(s.mean, [0.5; 4]);
        assert_eq!(s.std, [0.5; 4]);
    }

    #[test]
    fn matches_two_pass_and_is_order_free() {
        let rasters = random_rasters(4, 40);
        let s = compute_channel_stats(rasters.iter()).unwrap();
        let rev = compute_channel_stats(rasters.iter().rev()).unwrap();
        let (mean, std) = two_pass(&rasters);
        for c in 0..4 {
            assert!((s.mean[c] - mean[c]).abs() < 1e-9);
            assert!((s.std[c] - std[c]).abs() < 1e-9);
            assert!((s.mean[c] - rev.mean[c]).abs() < 1e-9);
            assert!((s.std[c] - rev.std[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn shard_merge_equals_single_pass() {
        let rasters = random_rasters(8, 20);
        let whole = compute_channel_stats(rasters.iter()).unwrap();
        let mut a = StatsAccumulator::new();
        let mut b = StatsAccumulator::new();
        for (i, r) in rasters.iter().enumerate() {
            if i % 3 == 0 { a.push(r).unwrap() } else { b.push(r).unwrap() }
        }
        a.merge(&b);
        let merged = a.finish().unwrap();
        for c in 0..4 {
            assert!((merged.mean[c] - whole.mean[c]).abs() < 1e-12);
            assert!((merged.std[c] - whole.std[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(compute_channel_stats(std::iter::empty::<&Raster<f32>>()).is_err());
    }

    #[test]
    fn normalization_identities() {
        let stats = ChannelStats {
            mean: [0.1, 0.2, 0.3, 0.4],
            std: [0.5, 0.25, 2.0, 1.0],
            n_pixels: 1,
        };
        let at_mean = Raster::new(1, 1, 4, stats.mean.to_vec()).unwrap();
        assert!(normalize_patch(&at_mean, &stats).unwrap().data().iter().all(|v| v.abs() < 1e-15));
        let plus_std: Vec<f64> = (0..4).map(|c| stats.mean[c] + stats.std[c]).collect();
        let one = normalize_patch(&Raster::new(1, 1, 4, plus_std).unwrap(), &stats).unwrap();
        assert!(one.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let bad = Raster::new(1, 1, 3, vec![0.0f64; 3]).unwrap();
        assert!(normalize_patch(&bad, &stats).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let r = random_rasters(3, 1).pop().unwrap().cast::<f32>();
        let stats = compute_channel_stats([&r]).unwrap();
        let back = denormalize_patch(&normalize_patch(&r, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_corpus_is_standard() {
        let rasters = random_rasters(5, 10);
        let stats = compute_channel_stats(rasters.iter()).unwrap();
        let normed: Vec<_> = rasters.iter().map(|r| normalize_patch(r, &stats).unwrap()).collect();
        let again = compute_channel_stats(normed.iter()).unwrap();
        for c in 0..4 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-6);
        }
    }
}
