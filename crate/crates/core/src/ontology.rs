//! CORINE-derived class sets at three granularities and the aggregation
//! between them.
//!
//! The class lists live in `data/ontology.json` (embedded at build time, and
//! overridable at runtime with [`Ontology::load`]). Within a level classes are
//! ordered by ascending CLC code, which fixes the vector index of every class.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance within which a label's total mass is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

const BUILTIN_ONTOLOGY: &str = include_str!("../data/ontology.json");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "LEVEL1")]
    Level1,
    #[serde(rename = "LEVEL1_5")]
    Level1_5,
    #[serde(rename = "LEVEL2")]
    Level2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Level1, Level::Level1_5, Level::Level2];

    pub fn cardinality(self) -> usize {
        match self {
            Level::Level1 => 5,
            Level::Level1_5 => 7,
            Level::Level2 => 15,
        }
    }

    /// 0 for the coarsest level, increasing with granularity.
    pub fn depth(self) -> usize {
        match self {
            Level::Level1 => 0,
            Level::Level1_5 => 1,
            Level::Level2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Level1 => "LEVEL1",
            Level::Level1_5 => "LEVEL1_5",
            Level::Level2 => "LEVEL2",
        }
    }

    /// Next coarser level, `None` at LEVEL1.
    pub fn parent(self) -> Option<Level> {
        match self {
            Level::Level1 => None,
            Level::Level1_5 => Some(Level::Level1),
            Level::Level2 => Some(Level::Level1_5),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LEVEL1" | "L1" => Ok(Level::Level1),
            "LEVEL1_5" | "LEVEL1.5" | "L1_5" | "L1.5" => Ok(Level::Level1_5),
            "LEVEL2" | "L2" => Ok(Level::Level2),
            _ => Err(Error::UnknownLevel(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyClass {
    pub code: String,
    pub name: String,
    pub parent_code: Option<String>,
    /// Legend colour used when rendering maps.
    #[serde(default = "default_color")]
    pub color: [u8; 3],
}

fn default_color() -> [u8; 3] {
    [128, 128, 128]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyLevel {
    pub level: Level,
    pub classes: Vec<OntologyClass>,
}

impl OntologyLevel {
    pub fn cardinality(&self) -> usize {
        self.classes.len()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.code == code)
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn codes(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.code.clone()).collect()
    }
}

/// All three levels plus the parent links that tie them together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub version: String,
    pub levels: Vec<OntologyLevel>,
}

impl Ontology {
    /// The ontology shipped with the crate.
    pub fn builtin() -> &'static Ontology {
        static BUILTIN: OnceLock<Ontology> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Ontology::from_json(BUILTIN_ONTOLOGY).expect("embedded ontology file is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ontology: Ontology =
            serde_json::from_str(text).map_err(|e| Error::Ontology(e.to_string()))?;
        ontology.validate()?;
        Ok(ontology)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ontology serializes")
    }

    pub fn level(&self, level: Level) -> &OntologyLevel {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .expect("validated ontology holds every level")
    }

    fn validate(&self) -> Result<()> {
        for level in Level::ALL {
            let matches = self.levels.iter().filter(|l| l.level == level).count();
            if matches != 1 {
                return Err(Error::Ontology(format!(
                    "expected exactly one {level} entry, found {matches}"
                )));
            }
            let l = self.level(level);
            if l.cardinality() != level.cardinality() {
                return Err(Error::Ontology(format!(
                    "{level} must have {} classes, found {}",
                    level.cardinality(),
                    l.cardinality()
                )));
            }
            for pair in l.classes.windows(2) {
                if pair[0].code >= pair[1].code {
                    return Err(Error::Ontology(format!(
                        "{level}: codes must be unique and ascending (`{}` then `{}`)",
                        pair[0].code, pair[1].code
                    )));
                }
            }
            match level.parent() {
                None => {
                    if let Some(c) = l.classes.iter().find(|c| c.parent_code.is_some()) {
                        return Err(Error::Ontology(format!(
                            "{level} class `{}` must not have a parent",
                            c.code
                        )));
                    }
                }
                Some(parent) => {
                    let p = self.level(parent);
                    let mut covered = vec![false; p.cardinality()];
                    for c in &l.classes {
                        let idx = c
                            .parent_code
                            .as_deref()
                            .and_then(|code| p.index_of(code))
                            .ok_or_else(|| {
                                Error::Ontology(format!(
                                    "{level} class `{}` has no valid parent in {parent}",
                                    c.code
                                ))
                            })?;
                        covered[idx] = true;
                    }
                    if let Some(i) = covered.iter().position(|c| !c) {
                        return Err(Error::Ontology(format!(
                            "{parent} class `{}` has no children in {level}",
                            p.classes[i].code
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Partition map from `source` onto the strictly coarser `target`.
    pub fn aggregation(&self, source: Level, target: Level) -> Result<AggregationMap> {
        if source.depth() <= target.depth() {
            return Err(Error::NotCoarser { from: source, to: target });
        }
        let src = self.level(source);
        // Walk each class up the parent chain one level at a time.
        let mut assignment: Vec<usize> = (0..src.cardinality()).collect();
        let mut current = source;
        while current != target {
            let parent = current.parent().expect("target is coarser");
            let cur_level = self.level(current);
            let par_level = self.level(parent);
            let step: HashMap<usize, usize> = cur_level
                .classes
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let code = c.parent_code.as_deref().unwrap_or_default();
                    (i, par_level.index_of(code).expect("validated parent link"))
                })
                .collect();
            for a in assignment.iter_mut() {
                *a = step[a];
            }
            current = parent;
        }
        AggregationMap::new(source, target, assignment, target.cardinality())
    }
}

/// Canonical class list for a level name.
pub fn build_level(name: &str) -> Result<OntologyLevel> {
    let level: Level = name.parse()?;
    Ok(Ontology::builtin().level(level).clone())
}

/// Partition map between two levels of the built-in ontology.
pub fn build_aggregation(source: &OntologyLevel, target: &OntologyLevel) -> Result<AggregationMap> {
    Ontology::builtin().aggregation(source.level, target.level)
}

/// Total function from source classes onto target classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationMap {
    source: Level,
    target: Level,
    assignment: Vec<usize>,
    n_target: usize,
}

impl AggregationMap {
    pub fn new(source: Level, target: Level, assignment: Vec<usize>, n_target: usize) -> Result<Self> {
        let map = Self {
            source,
            target,
            assignment,
            n_target,
        };
        if !map.is_partition() {
            return Err(Error::Ontology(format!(
                "aggregation {source} -> {target} is not a partition"
            )));
        }
        Ok(map)
    }

    pub fn source(&self) -> Level {
        self.source
    }

    pub fn target(&self) -> Level {
        self.target
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn target_of(&self, source_idx: usize) -> usize {
        self.assignment[source_idx]
    }

    /// `matrix[target][source]` is 1 iff the source class maps onto the target class.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.assignment.len()]; self.n_target];
        for (s, &t) in self.assignment.iter().enumerate() {
            m[t][s] = 1;
        }
        m
    }

    pub fn preimage_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_target];
        for &t in &self.assignment {
            sizes[t] += 1;
        }
        sizes
    }

    /// Every source class has one target, every target at least one preimage.
    pub fn is_partition(&self) -> bool {
        self.assignment.len() == self.source.cardinality()
            && self.n_target == self.target.cardinality()
            && self.assignment.iter().all(|&t| t < self.n_target)
            && self.preimage_sizes().iter().all(|&n| n >= 1)
    }

    /// `other ∘ self`: first apply `self`, then `other`.
    pub fn then(&self, other: &AggregationMap) -> Result<AggregationMap> {
        if other.source != self.target {
            return Err(Error::LevelMismatch {
                expected: self.target,
                found: other.source,
            });
        }
        let assignment = self.assignment.iter().map(|&t| other.assignment[t]).collect();
        AggregationMap::new(self.source, other.target, assignment, other.n_target)
    }

    /// Sum source masses into their target classes.
    pub fn apply<T: Scalar>(&self, probs: &[T]) -> Result<Vec<T>> {
        if probs.len() != self.assignment.len() {
            return Err(Error::LengthMismatch {
                expected: self.assignment.len(),
                found: probs.len(),
            });
        }
        let mut out = vec![T::zero(); self.n_target];
        for (&p, &t) in probs.iter().zip(&self.assignment) {
            out[t] += p;
        }
        Ok(out)
    }
}

/// Probability vector over the classes of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution<T> {
    level: Level,
    probs: Vec<T>,
}

impl<T: Scalar> LabelDistribution<T> {
    /// Validates non-negativity and unit mass. Mass off by at most
    /// [`RENORMALIZE_TOLERANCE`] is renormalized, anything larger is rejected.
    pub fn new(level: Level, probs: Vec<T>) -> Result<Self> {
        if probs.len() != level.cardinality() {
            return Err(Error::LengthMismatch {
                expected: level.cardinality(),
                found: probs.len(),
            });
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < T::zero()) {
            return Err(Error::NotADistribution(format!("entry {i} is {p}")));
        }
        let total: T = probs.iter().copied().sum();
        let off = (total.as_f64() - 1.0).abs();
        if off > RENORMALIZE_TOLERANCE {
            return Err(Error::NotADistribution(format!("entries sum to {total}")));
        }
        let probs = if total == T::one() {
            probs
        } else {
            probs.into_iter().map(|p| p / total).collect()
        };
        Ok(Self { level, probs })
    }

    pub fn one_hot(level: Level, index: usize) -> Self {
        let mut probs = vec![T::zero(); level.cardinality()];
        probs[index] = T::one();
        Self { level, probs }
    }

    pub fn uniform(level: Level) -> Self {
        let n = level.cardinality();
        Self {
            level,
            probs: vec![T::one() / T::from_usize_lossy(n); n],
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> T {
        self.probs[self.argmax()]
    }

    pub fn cast<U: Scalar>(&self) -> LabelDistribution<U> {
        LabelDistribution {
            level: self.level,
            probs: self.probs.iter().map(|p| U::from_f64_lossy(p.as_f64())).collect(),
        }
    }
}

/// Push a distribution through an aggregation map; mass is carried over exactly.
pub fn aggregate_distribution<T: Scalar>(
    d: &LabelDistribution<T>,
    map: &AggregationMap,
) -> Result<LabelDistribution<T>> {
    if d.level != map.source {
        return Err(Error::LevelMismatch {
            expected: map.source,
            found: d.level,
        });
    }
    Ok(LabelDistribution {
        level: map.target,
        probs: map.apply(&d.probs)?,
    })
}

/// Re-express `d` at `target`, which must be equal to or coarser than its level.
pub fn to_level<T: Scalar>(d: &LabelDistribution<T>, target: Level) -> Result<LabelDistribution<T>> {
    if d.level == target {
        return Ok(d.clone());
    }
    let map = Ontology::builtin().aggregation(d.level, target)?;
    aggregate_distribution(d, &map)
}
