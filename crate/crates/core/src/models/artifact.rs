//! On-disk model artifacts: `config.json`, `weights.bin`, `stats.json`,
//! `ontology.json`, plus feature caches for temporal training.
//!
//! `weights.bin` is `TLCW`, a one-byte dtype tag length, the dtype name,
//! a u64 value count and the values little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::temporal::FeatureSequence;
use crate::models::{EncoderConfig, TemporalHeadConfig};
use crate::nn::AdamConfig;
use crate::ontology::Level;
use crate::scalar::Scalar;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const WEIGHTS_MAGIC: &[u8; 4] = b"TLCW";
const FEATURES_MAGIC: &[u8; 4] = b"TLCF";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Mono,
    Temporal,
}

/// Contents of `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: ArtifactKind,
    pub level: Level,
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<TemporalHeadConfig>,
    /// Month used for single-date training and inference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub code_version: String,
    pub dtype: String,
    /// Hash of the encoder artifact's weights (temporal models only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hash: Option<String>,
    /// Snapshot of the training configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

impl ArtifactMeta {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(self).expect("meta serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }
}

fn push_dtype<T: Scalar>(out: &mut Vec<u8>) {
    out.push(T::DTYPE.len() as u8);
    out.extend_from_slice(T::DTYPE.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.bad("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bad(&self, message: &str) -> Error {
        Error::RasterFormat {
            path: self.path.to_path_buf(),
            message: message.to_string(),
        }
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.bad("bad magic"));
        }
        Ok(())
    }

    fn dtype(&mut self) -> Result<String> {
        let n = self.take(1)?[0] as usize;
        let s = self.take(n)?;
        String::from_utf8(s.to_vec()).map_err(|_| self.bad("dtype is not utf-8"))
    }

    /// `n` values stored as `dtype`, converted to `T`.
    fn values<T: Scalar>(&mut self, dtype: &str, n: usize) -> Result<Vec<T>> {
        match dtype {
            "f32" => Ok(self
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect()),
            "f64" => Ok(self
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::read_le(c)))
                .collect()),
            other => Err(self.bad(&format!("unsupported dtype `{other}`"))),
        }
    }
}

pub fn write_weights<T: Scalar>(path: &Path, params: &[T]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + params.len() * T::BYTES);
    out.extend_from_slice(WEIGHTS_MAGIC);
    push_dtype::<T>(&mut out);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &p in params {
        p.write_le(&mut out);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Values are converted when the file's dtype differs from `T`.
pub fn read_weights<T: Scalar>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    r.magic(WEIGHTS_MAGIC)?;
    let dtype = r.dtype()?;
    let n = r.u64()? as usize;
    let values = r.values(&dtype, n)?;
    if r.pos != bytes.len() {
        return Err(r.bad("trailing bytes"));
    }
    Ok(values)
}

/// SHA-256 over the little-endian parameter bytes, hex encoded.
pub fn weights_hash<T: Scalar>(params: &[T]) -> String {
    let mut bytes = Vec::with_capacity(params.len() * T::BYTES);
    for &p in params {
        p.write_le(&mut bytes);
    }
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-patch encoder feature sequences, in record order.
pub type FeatureCache<T> = Vec<(String, FeatureSequence<T>)>;

pub fn save_feature_cache<T: Scalar>(path: &Path, cache: &[(String, FeatureSequence<T>)]) -> Result<()> {
    let (steps, dim) = cache.first().map(|(_, s)| (s.len(), s.dim())).unwrap_or((0, 0));
    let mut out = Vec::new();
    out.extend_from_slice(FEATURES_MAGIC);
    push_dtype::<T>(&mut out);
    out.extend_from_slice(&(steps as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(cache.len() as u64).to_le_bytes());
    for (id, seq) in cache {
        if seq.len() != steps || seq.dim() != dim {
            return Err(Error::Shape(format!("feature sequence `{id}` differs in shape from the first entry")));
        }
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for row in seq.rows() {
            for &v in row {
                v.write_le(&mut out);
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_feature_cache<T: Scalar>(path: &Path) -> Result<FeatureCache<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    r.magic(FEATURES_MAGIC)?;
    let dtype = r.dtype()?;
    let steps = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let n = r.u64()? as usize;
    let mut cache = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.bad("patch id is not utf-8"))?;
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            rows.push(r.values::<T>(&dtype, dim)?);
        }
        cache.push((id, FeatureSequence::new(rows)?));
    }
    if r.pos != bytes.len() {
        return Err(r.bad("trailing bytes"));
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_and_convert() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = vec![1.5f32, -0.125, 3.0e-8, f32::MAX];
        write_weights(&path, &w).unwrap();
        assert_eq!(read_weights::<f32>(&path).unwrap(), w);
        let wide: Vec<f64> = read_weights(&path).unwrap();
        assert_eq!(wide, w.iter().map(|&v| v as f64).collect::<Vec<_>>());
        fs::write(&path, b"TLCWjunk").unwrap();
        assert!(read_weights::<f32>(&path).is_err());
    }

    #[test]
    fn hash_tracks_every_bit() {
        let a = vec![0.0f64, 1.0, 2.0];
        let mut b = a.clone();
        assert_eq!(weights_hash(&a), weights_hash(&b));
        b[2] = f64::from_bits(b[2].to_bits() ^ 1);
        assert_ne!(weights_hash(&a), weights_hash(&b));
        assert_eq!(weights_hash(&a).len(), 64);
    }

    #[test]
    fn feature_cache_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let cache: FeatureCache<f32> = (0..3)
            .map(|i| {
                let rows = (0..12).map(|t| (0..5).map(|d| (i * 100 + t * 10 + d) as f32 / 7.0).collect()).collect();
                (format!("p{i}"), FeatureSequence::new(rows).unwrap())
            })
            .collect();
        save_feature_cache(&path, &cache).unwrap();
        let back = load_feature_cache::<f32>(&path).unwrap();
        assert_eq!(back.len(), 3);
        for ((ia, a), (ib, b)) in cache.iter().zip(&back) {
            assert_eq!(ia, ib);
            for (ra, rb) in a.rows().iter().zip(b.rows()) {
                assert!(ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
