//! Train/validation/test splits that keep each split's class mix close to the corpus.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::PatchRecord;
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.20, 0.10];
pub const DEFAULT_MASS_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            _ => Err(Error::config("subset", format!("unknown subset `{s}`"))),
        }
    }
}

impl DatasetSplit {
    pub fn ids(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    /// Records belonging to `subset`, in corpus order.
    pub fn select<'a>(&self, records: &'a [PatchRecord], subset: Subset) -> Vec<&'a PatchRecord> {
        let ids: HashSet<&str> = self.ids(subset).iter().map(String::as_str).collect();
        records.iter().filter(|r| ids.contains(r.patch_id.as_str())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Largest absolute gap between a split's mean class share and the corpus mean share.
    pub fn max_mass_deviation(&self, records: &[PatchRecord]) -> f64 {
        let corpus = mean_shares(records.iter());
        [Subset::Train, Subset::Val, Subset::Test]
            .into_iter()
            .map(|s| self.select(records, s))
            .filter(|sel| !sel.is_empty())
            .flat_map(|sel| {
                let shares = mean_shares(sel.into_iter());
                shares.into_iter().zip(corpus.clone()).map(|(a, b)| (a - b).abs())
            })
            .fold(0.0, f64::max)
    }
}

fn mean_shares<'a>(records: impl Iterator<Item = &'a PatchRecord>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in records {
        let p = r.label.probs();
        if sum.is_empty() {
            sum = vec![0.0; p.len()];
        }
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
        n += 1;
    }
    sum.into_iter().map(|s| s / n.max(1) as f64).collect()
}

/// Seeded split stratified by each patch's dominant class.
///
/// Records are grouped by dominant class, shuffled within each group, and
/// then dealt out so that every prefix of the ordering stays as close as
/// possible to the requested fractions. Split sizes land within one record
/// of their targets, and so does each dominant-class stratum.
pub fn stratified_split(
    records: &[PatchRecord],
    fractions: [f64; 3],
    seed: u64,
    tolerance: f64,
) -> Result<DatasetSplit> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::config("fractions", "every fraction must be positive"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("fractions", "fractions must sum to 1"));
    }

    let n_classes = records.first().map(|r| r.label.probs().len()).unwrap_or(0);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, r) in records.iter().enumerate() {
        strata[r.label.argmax()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(records.len());
    for stratum in strata.iter_mut() {
        stratum.shuffle(&mut rng);
        order.extend_from_slice(stratum);
    }

    let mut buckets: [Vec<String>; 3] = Default::default();
    for (k, idx) in order.into_iter().enumerate() {
        let deficit = |s: usize| fractions[s] * (k + 1) as f64 - buckets[s].len() as f64;
        let target = (0..3)
            .max_by(|&a, &b| deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a)))
            .expect("three buckets");
        buckets[target].push(records[idx].patch_id.clone());
    }

    let [train, val, test] = buckets;
    let split = DatasetSplit {
        train,
        val,
        test,
        fractions,
        seed,
    };
    let dev = split.max_mass_deviation(records);
    if dev > tolerance {
        log::warn!(
            "class mass deviates by {dev:.4} (> {tolerance}) across splits; corpus of {} records is too small for a tighter split",
            records.len()
        );
    }
    Ok(split)
}
