//! Label-set binarization and micro / per-class F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{to_level, LabelDistribution, Level, Ontology};
use crate::scalar::Scalar;

pub type LabelSet = BTreeSet<usize>;

pub const DEFAULT_TAU: f64 = 0.1;

/// Predicted presence is `p >= tau`; ground-truth presence is any nonzero share.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub tau: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl ThresholdRule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config("tau", format!("must lie in (0, 1), got {tau}")));
        }
        Ok(Self { tau })
    }
}

pub fn distribution_to_labels<T: Scalar>(probs: &[T], rule: ThresholdRule) -> LabelSet {
    probs.iter().enumerate().filter(|(_, p)| p.as_f64() >= rule.tau).map(|(i, _)| i).collect()
}

pub fn truth_to_labels<T: Scalar>(probs: &[T]) -> LabelSet {
    probs.iter().enumerate().filter(|(_, p)| **p > T::zero()).map(|(i, _)| i).collect()
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `2TP / (2TP + FP + FN)`, or `None` when all three counts are zero.
    pub fn f1(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64)
        }
    }
}

/// Per-class counts for label sets over `n_classes` classes.
pub fn confusion_counts(pred: &[LabelSet], truth: &[LabelSet], n_classes: usize) -> Result<Vec<Counts>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let mut counts = vec![Counts::default(); n_classes];
    for (p, t) in pred.iter().zip(truth) {
        if let Some(&c) = p.iter().chain(t).find(|&&c| c >= n_classes) {
            return Err(Error::Shape(format!("class index {c} outside 0..{n_classes}")));
        }
        for &c in p.intersection(t) {
            counts[c].tp += 1;
        }
        for &c in p.difference(t) {
            counts[c].fp += 1;
        }
        for &c in t.difference(p) {
            counts[c].fn_ += 1;
        }
    }
    Ok(counts)
}

fn micro_from_counts(counts: &[Counts]) -> f64 {
    let mut total = Counts::default();
    for &c in counts {
        total.add(c);
    }
    total.f1().unwrap_or_else(|| {
        log::warn!("no labels predicted or present; micro-F1 defined as 1.0");
        1.0
    })
}

/// Micro-F1 over all (patch, class) pairs; 1.0 when every set is empty.
pub fn micro_f1(pred: &[LabelSet], truth: &[LabelSet]) -> Result<f64> {
    let n = pred.iter().chain(truth).filter_map(|s| s.iter().next_back()).max().map_or(0, |&m| m + 1);
    Ok(micro_from_counts(&confusion_counts(pred, truth, n)?))
}

/// F1 by class code; classes never predicted nor present are left out.
pub fn per_class_f1(pred: &[LabelSet], truth: &[LabelSet], level: Level) -> Result<BTreeMap<String, f64>> {
    let codes = Ontology::builtin().level(level).codes();
    let counts = confusion_counts(pred, truth, codes.len())?;
    Ok(codes.into_iter().zip(counts).filter_map(|(code, c)| c.f1().map(|f| (code, f))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub code: String,
    pub name: String,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub tau: f64,
    pub micro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    /// In class-index order.
    pub counts: Vec<ClassCounts>,
    pub n_patches: usize,
}

impl EvalReport {
    /// Micro-F1 recomputed from the stored counts.
    pub fn micro_from_counts(&self) -> f64 {
        let c: Vec<Counts> = self.counts.iter().map(|c| c.counts).collect();
        micro_from_counts(&c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Score predictions against ground truth at `level`; both sides are
/// aggregated there first, so `level` may be coarser than the predictions.
pub fn evaluate_distributions<T: Scalar>(
    pred: &[LabelDistribution<T>],
    truth: &[LabelDistribution<f64>],
    level: Level,
    rule: ThresholdRule,
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let pred_sets = pred
        .iter()
        .map(|d| Ok(distribution_to_labels(to_level(d, level)?.probs(), rule)))
        .collect::<Result<Vec<_>>>()?;
    let truth_sets = truth
        .iter()
        .map(|d| Ok(truth_to_labels(to_level(d, level)?.probs())))
        .collect::<Result<Vec<_>>>()?;
    report_from_sets(&pred_sets, &truth_sets, level, rule)
}

pub fn report_from_sets(pred: &[LabelSet], truth: &[LabelSet], level: Level, rule: ThresholdRule) -> Result<EvalReport> {
    let classes = &Ontology::builtin().level(level).classes;
    let counts = confusion_counts(pred, truth, classes.len())?;
    let micro = micro_from_counts(&counts);
    let per_class = classes
        .iter()
        .zip(&counts)
        .filter_map(|(c, n)| n.f1().map(|f| (c.code.clone(), f)))
        .collect();
    Ok(EvalReport {
        level,
        tau: rule.tau,
        micro_f1: micro,
        per_class_f1: per_class,
        counts: classes
            .iter()
            .zip(counts)
            .map(|(c, counts)| ClassCounts {
                code: c.code.clone(),
                name: c.name.clone(),
                counts,
            })
            .collect(),
        n_patches: pred.len(),
    })
}

/// Micro-F1 at each threshold.
pub fn tau_sweep<T: Scalar>(
    pred: &[LabelDistribution<T>],
    truth: &[LabelDistribution<f64>],
    level: Level,
    taus: &[f64],
) -> Result<Vec<(f64, f64)>> {
    taus.iter()
        .map(|&tau| Ok((tau, evaluate_distributions(pred, truth, level, ThresholdRule::new(tau)?)?.micro_f1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> LabelSet {
        v.iter().copied().collect()
    }

    // Independent route: walk every (patch, class) pair.
    fn brute(pred: &[LabelSet], truth: &[LabelSet], n: usize) -> Vec<(u64, u64, u64)> {
        let mut out = vec![(0, 0, 0); n];
        for (p, t) in pred.iter().zip(truth) {
            for (c, o) in out.iter_mut().enumerate() {
                match (p.contains(&c), t.contains(&c)) {
                    (true, true) => o.0 += 1,
                    (true, false) => o.1 += 1,
                    (false, true) => o.2 += 1,
                    (false, false) => {}
                }
            }
        }
        out
    }

    fn random_sets(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<LabelSet> {
        (0..n)
            .map(|_| (0..classes).filter(|_| rng.random::<f64>() < 0.3).collect())
            .collect()
    }

    #[test]
    fn binarization_examples() {
        let one_hot = LabelDistribution::<f64>::one_hot(Level::Level2, 4);
        assert_eq!(distribution_to_labels(one_hot.probs(), ThresholdRule::default()), set(&[4]));
        assert_eq!(truth_to_labels(&[0.4, 0.5, 0.0, 0.1, 0.0]), set(&[0, 1, 3]));
        let uniform = LabelDistribution::<f64>::uniform(Level::Level2);
        assert!(distribution_to_labels(uniform.probs(), ThresholdRule::default()).is_empty());
        assert!(ThresholdRule::new(0.0).is_err());
        assert!(ThresholdRule::new(1.0).is_err());
    }

    #[test]
    fn micro_examples() {
        let t = vec![set(&[0, 1]), set(&[2])];
        assert_eq!(micro_f1(&t, &t).unwrap(), 1.0);
        // TP=2 (0, 2), FP=1 (3), FN=1 (1)
        let p = vec![set(&[0, 3]), set(&[2])];
        assert!((micro_f1(&p, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(micro_f1(&[set(&[])], &[set(&[])]).unwrap(), 1.0);
        assert!(micro_f1(&p, &t[..1]).is_err());
    }

    #[test]
    fn per_class_examples() {
        let f = per_class_f1(&[set(&[0]), set(&[])], &[set(&[0]), set(&[0])], Level::Level1).unwrap();
        assert_eq!(f.len(), 1);
        assert!((f["1"] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pred = random_sets(&mut rng, 1000, 15);
        let truth = random_sets(&mut rng, 1000, 15);
        let oracle = brute(&pred, &truth, 15);
        let counts = confusion_counts(&pred, &truth, 15).unwrap();
        for (c, o) in counts.iter().zip(&oracle) {
            assert_eq!((c.tp, c.fp, c.fn_), *o);
        }
        let (tp, fp, fn_) = oracle.iter().fold((0, 0, 0), |a, o| (a.0 + o.0, a.1 + o.1, a.2 + o.2));
        assert_eq!(micro_f1(&pred, &truth).unwrap(), 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        let per = per_class_f1(&pred, &truth, Level::Level2).unwrap();
        let codes = Ontology::builtin().level(Level::Level2).codes();
        for (i, o) in oracle.iter().enumerate() {
            let expected = 2.0 * o.0 as f64 / (2 * o.0 + o.1 + o.2) as f64;
            assert_eq!(per[&codes[i]], expected);
        }
        let report = report_from_sets(&pred, &truth, Level::Level2, ThresholdRule::default()).unwrap();
        assert!((report.micro_from_counts() - report.micro_f1).abs() < 1e-12);
    }

    #[test]
    fn coarse_evaluation_aggregates_first() {
        // 1.1 and 1.2 both roll up to class 1 at LEVEL1.
        let mut p = vec![0.0; 15];
        p[0] = 0.06;
        p[1] = 0.06;
        p[5] = 0.88;
        let pred = LabelDistribution::new(Level::Level2, p).unwrap();
        let truth = LabelDistribution::one_hot(Level::Level2, 0);
        let fine = evaluate_distributions(&[pred.clone()], &[truth.clone()], Level::Level2, ThresholdRule::default()).unwrap();
        let coarse = evaluate_distributions(&[pred], &[truth], Level::Level1, ThresholdRule::default()).unwrap();
        assert_eq!(fine.counts[0].counts.tp, 0);
        assert_eq!(coarse.counts[0].counts.tp, 1);
        assert!(coarse.micro_f1 > fine.micro_f1);
    }

    #[test]
    fn oracle_model_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth: Vec<LabelDistribution<f64>> = (0..50)
            .map(|_| {
                let mut v: Vec<f64> = (0..15).map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() + 0.5 } else { 0.0 }).collect();
                v[rng.random_range(0..15)] += 1.0;
                let s: f64 = v.iter().sum();
                LabelDistribution::new(Level::Level2, v.into_iter().map(|x| x / s).collect()).unwrap()
            })
            .collect();
        // Shares can fall below tau, so predict the truth's presence pattern exactly.
        let pred_sets: Vec<LabelSet> = truth.iter().map(|d| truth_to_labels(d.probs())).collect();
        let truth_sets = pred_sets.clone();
        let r = report_from_sets(&pred_sets, &truth_sets, Level::Level2, ThresholdRule::default()).unwrap();
        assert_eq!(r.micro_f1, 1.0);
    }

    proptest! {
        #[test]
        fn lowering_tau_is_monotone(
            raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 7), 1..30),
            truth_mask in prop::collection::vec(prop::collection::vec(any::<bool>(), 7), 30),
            hi in 0.05f64..0.9,
            drop in 0.0f64..0.05,
        ) {
            let lo = hi - drop;
            let preds: Vec<Vec<f64>> = raw.iter().map(|v| { let s: f64 = v.iter().sum::<f64>() + 1e-9; v.iter().map(|x| x / s).collect() }).collect();
            let truth: Vec<LabelSet> = truth_mask.iter().take(preds.len()).map(|m| m.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()).collect();
            let at = |tau: f64| {
                let sets: Vec<LabelSet> = preds.iter().map(|p| distribution_to_labels(p, ThresholdRule { tau })).collect();
                let c = confusion_counts(&sets, &truth, 7).unwrap();
                let (tp, fp, fn_) = c.iter().fold((0u64, 0u64, 0u64), |a, c| (a.0 + c.tp, a.1 + c.fp, a.2 + c.fn_));
                let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
                (tp, fp, recall)
            };
            let (tp_hi, fp_hi, r_hi) = at(hi);
            let (tp_lo, fp_lo, r_lo) = at(lo);
            prop_assert!(r_lo >= r_hi);
            // precision can move either way in general; the counts themselves are monotone
            prop_assert!(tp_lo >= tp_hi && fp_lo >= fp_hi);
        }

        #[test]
        fn micro_is_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = random_sets(&mut rng, 20, 5);
            let truth = random_sets(&mut rng, 20, 5);
            let a = micro_f1(&pred, &truth).unwrap();
            let (rp, rt): (Vec<_>, Vec<_>) = pred.into_iter().zip(truth).rev().unzip();
            prop_assert_eq!(a, micro_f1(&rp, &rt).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
