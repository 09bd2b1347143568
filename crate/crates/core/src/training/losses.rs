//! Distribution losses and their gradients with respect to logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{softmax, softmax_backward};
use crate::scalar::Scalar;

/// Clamp applied to predicted probabilities inside logarithms.
pub const CLAMP_EPS: f64 = 1e-12;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[default]
    #[serde(rename = "KL", alias = "kl")]
    Kl,
    #[serde(rename = "BCE", alias = "bce")]
    Bce,
    #[serde(rename = "FOCAL", alias = "focal")]
    Focal,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KL" => Ok(LossKind::Kl),
            "BCE" => Ok(LossKind::Bce),
            "FOCAL" => Ok(LossKind::Focal),
            _ => Err(Error::config("loss", format!("unknown loss `{s}` (KL, BCE, FOCAL)"))),
        }
    }
}

fn check_len(target: usize, predicted: usize) -> Result<()> {
    if target != predicted {
        return Err(Error::LengthMismatch {
            expected: target,
            found: predicted,
        });
    }
    Ok(())
}

/// `Σ t ln(t / p)` with `0 ln(0/p) = 0` and `p` clamped below at [`CLAMP_EPS`].
pub fn kl_loss<T: Scalar>(target: &[T], predicted: &[T]) -> Result<f64> {
    check_len(target.len(), predicted.len())?;
    Ok(target
        .iter()
        .zip(predicted)
        .filter(|(t, _)| **t > T::zero())
        .map(|(t, p)| {
            let (t, p) = (t.as_f64(), p.as_f64().max(CLAMP_EPS));
            t * (t / p).ln()
        })
        .sum())
}

fn clamp01(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// Class-mean binary cross-entropy against soft targets.
pub fn bce_loss<T: Scalar>(target: &[T], predicted: &[T]) -> Result<f64> {
    focal_loss(target, predicted, 0.0)
}

/// Class-mean focal loss `-[t (1-p)^γ ln p + (1-t) p^γ ln(1-p)]`.
pub fn focal_loss<T: Scalar>(target: &[T], predicted: &[T], gamma: f64) -> Result<f64> {
    check_len(target.len(), predicted.len())?;
    if !(gamma >= 0.0) {
        return Err(Error::config("focal_gamma", format!("must be non-negative, got {gamma}")));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = target
        .iter()
        .zip(predicted)
        .map(|(t, p)| {
            let (t, p) = (t.as_f64(), clamp01(p.as_f64()));
            -(t * (1.0 - p).powf(gamma) * p.ln() + (1.0 - t) * p.powf(gamma) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / target.len() as f64)
}

/// A loss applied to the softmax of a logit vector.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub kind: LossKind,
    pub focal_gamma: f64,
}

impl Default for Loss {
    fn default() -> Self {
        Self {
            kind: LossKind::Kl,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

impl Loss {
    pub fn new(kind: LossKind, focal_gamma: f64) -> Result<Self> {
        if !(focal_gamma >= 0.0) {
            return Err(Error::config("focal_gamma", format!("must be non-negative, got {focal_gamma}")));
        }
        Ok(Self { kind, focal_gamma })
    }

    pub fn value<T: Scalar>(&self, target: &[T], predicted: &[T]) -> Result<f64> {
        match self.kind {
            LossKind::Kl => kl_loss(target, predicted),
            LossKind::Bce => bce_loss(target, predicted),
            LossKind::Focal => focal_loss(target, predicted, self.focal_gamma),
        }
    }

    /// d loss / d p, zero where the clamp is active.
    fn grad_probs(&self, target: &[f64], p: &[f64]) -> Vec<f64> {
        let n = target.len() as f64;
        target
            .iter()
            .zip(p)
            .map(|(&t, &p)| match self.kind {
                LossKind::Kl => {
                    if t > 0.0 && p > CLAMP_EPS {
                        -t / p
                    } else {
                        0.0
                    }
                }
                LossKind::Bce | LossKind::Focal => {
                    if p <= CLAMP_EPS || p >= 1.0 - CLAMP_EPS {
                        return 0.0;
                    }
                    let g = if self.kind == LossKind::Bce { 0.0 } else { self.focal_gamma };
                    let q = 1.0 - p;
                    let pos = if g == 0.0 {
                        1.0 / p
                    } else {
                        -g * q.powf(g - 1.0) * p.ln() + q.powf(g) / p
                    };
                    let neg = if g == 0.0 {
                        -1.0 / q
                    } else {
                        g * p.powf(g - 1.0) * q.ln() - p.powf(g) / q
                    };
                    -(t * pos + (1.0 - t) * neg) / n
                }
            })
            .collect()
    }

    /// Loss of `softmax(logits)` against `target` and its gradient w.r.t. the logits.
    pub fn with_grad<T: Scalar>(&self, target: &[T], logits: &[T]) -> Result<(f64, Vec<T>)> {
        check_len(target.len(), logits.len())?;
        let z: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
        let t: Vec<f64> = target.iter().map(|v| v.as_f64()).collect();
        let p = softmax(&z);
        let loss = self.value(&t, &p)?;
        let grad = match self.kind {
            // the softmax Jacobian collapses to p - t·Σt here
            LossKind::Kl if p.iter().all(|&v| v > CLAMP_EPS) => {
                let mass: f64 = t.iter().sum();
                p.iter().zip(&t).map(|(p, t)| p * mass - t).collect()
            }
            _ => softmax_backward(&p, &self.grad_probs(&t, &p)),
        };
        Ok((loss, grad.into_iter().map(T::from_f64_lossy).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| if sparse && rng.random::<f64>() < 0.4 { 0.0 } else { rng.random::<f64>() + 1e-3 })
            .collect();
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    // Independent routes: explicit loops with the textbook formulas.
    fn kl_oracle(t: &[f64], p: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() {
            if t[i] != 0.0 {
                s += t[i] * t[i].ln() - t[i] * p[i].max(1e-12).ln();
            }
        }
        s
    }

    fn focal_oracle(t: &[f64], p: &[f64], g: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() {
            let pi = p[i].max(1e-12).min(1.0 - 1e-12);
            let a = if g == 0.0 { 1.0 } else { (1.0 - pi).powf(g) };
            let b = if g == 0.0 { 1.0 } else { pi.powf(g) };
            s += t[i] * a * pi.ln() + (1.0 - t[i]) * b * (1.0 - pi).ln();
        }
        -s / t.len() as f64
    }

    #[test]
    fn fixed_values() {
        assert!((kl_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((bce_loss(&[1.0], &[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((focal_loss(&[1.0], &[0.5], 2.0).unwrap() - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        let t = [0.4, 0.5, 0.0, 0.1, 0.0];
        let u = [0.2; 5];
        assert!((kl_loss(&t, &u).unwrap() - kl_oracle(&t, &u)).abs() < 1e-9);
        assert!(kl_loss(&[1.0], &[0.5, 0.5]).is_err());
        assert!(focal_loss(&[1.0], &[0.5], -1.0).is_err());
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-10);
    }

    #[test]
    fn oracles_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..100 {
            let t = random_simplex(&mut rng, 15, i % 2 == 0);
            let p = random_simplex(&mut rng, 15, false);
            assert!((kl_loss(&t, &p).unwrap() - kl_oracle(&t, &p)).abs() < 1e-9);
            assert!((bce_loss(&t, &p).unwrap() - focal_oracle(&t, &p, 0.0)).abs() < 1e-9);
            assert!((focal_loss(&t, &p, 2.0).unwrap() - focal_oracle(&t, &p, 2.0)).abs() < 1e-9);
            assert!((focal_loss(&t, &p, 0.0).unwrap() - bce_loss(&t, &p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for kind in [LossKind::Kl, LossKind::Bce, LossKind::Focal] {
            let loss = Loss::new(kind, 2.0).unwrap();
            for i in 0..100 {
                let t = random_simplex(&mut rng, 7, i % 3 == 0);
                let z: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let (_, g) = loss.with_grad(&t, &z).unwrap();
                for k in 0..7 {
                    let mut zp = z.clone();
                    zp[k] += h;
                    let mut zm = z.clone();
                    zm[k] -= h;
                    let numeric = (loss.with_grad(&t, &zp).unwrap().0 - loss.with_grad(&t, &zm).unwrap().0) / (2.0 * h);
                    let rel = (numeric - g[k]).abs() / numeric.abs().max(g[k].abs()).max(1e-6);
                    assert!(rel < 1e-4, "{kind:?} point {i} logit {k}: {numeric} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn loss_names_parse() {
        assert_eq!("kl".parse::<LossKind>().unwrap(), LossKind::Kl);
        assert_eq!("FOCAL".parse::<LossKind>().unwrap(), LossKind::Focal);
        assert!("mse".parse::<LossKind>().is_err());
        assert_eq!(serde_json::to_string(&LossKind::Bce).unwrap(), "\"BCE\"");
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_vanish_on_target(raw_t in prop::collection::vec(0.01f64..1.0, 2..16), seed in 0u64..100) {
            let s: f64 = raw_t.iter().sum();
            let t: Vec<f64> = raw_t.iter().map(|x| x / s).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_simplex(&mut rng, t.len(), false);
            prop_assert!(kl_loss(&t, &p).unwrap() >= -1e-12);
            prop_assert!(kl_loss(&t, &t).unwrap().abs() < 1e-12);
            prop_assert!(bce_loss(&t, &p).unwrap() >= 0.0);
            prop_assert!(focal_loss(&t, &p, 2.0).unwrap() >= 0.0);
            // soft-target BCE is minimized, not zeroed, at p == t
            prop_assert!(bce_loss(&t, &t).unwrap() <= bce_loss(&t, &p).unwrap() + 1e-12);
        }
    }
}
