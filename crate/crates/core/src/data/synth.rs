//! Deterministic synthetic seasonal corpus.
//!
//! Each tile is a Voronoi mosaic of LEVEL2 classes painted at pixel level, so
//! a patch's ground truth is the exact area share of every class inside it.
//! Every class has a 4-band (R, G, B, N) signature that follows a yearly
//! vegetation curve. Paired "seasonal twin" classes share their appearance at
//! `twin_month` (per-pixel identical rasters) but follow mirrored curves for
//! the rest of the year, so only the time series can tell them apart.
//!
//! Pixel noise is drawn from one stream per (seed, tile, month) in raster
//! order, independent of the class painted at each pixel.
//!
//! Output layout:
//!
//! ```text
//! out/manifest.jsonl
//! out/synth_config.json
//! out/rasters/T000_m01.tlc ... (one tile raster per month)
//! out/truth/T000_classes.tlc   (1-band class index map)
//! out/change/A_m01.tlc, B_m01.tlc, ..., truth.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{write_manifest, PatchRecord, MONTHS};
use crate::data::tiling::{DEFAULT_EXTENT_M, DEFAULT_GRID_N};
use crate::error::{Error, Result};
use crate::ontology::{LabelDistribution, Level, Ontology};
use crate::raster::Raster;

const VEG_RESPONSE: [f64; 4] = [-0.06, 0.04, -0.03, 0.30];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tiles: usize,
    pub grid_n: usize,
    pub patch_px: usize,
    /// Number of LEVEL2 classes painted, taken in code order.
    pub classes: usize,
    /// Pairs of LEVEL2 codes that look identical at `twin_month`.
    pub twin_pairs: Vec<[String; 2]>,
    pub twin_month: u8,
    /// Mean Voronoi cell area, in patches.
    pub region_patches: f64,
    pub noise_std: f64,
    pub extent_m: f64,
    /// Also emit a two-date tile with a known change region.
    pub change_pair: bool,
    pub change_from: String,
    pub change_to: String,
    /// Side of the square change region as a fraction of the grid side.
    pub change_side: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tiles: 10,
            grid_n: DEFAULT_GRID_N,
            patch_px: 8,
            classes: 15,
            twin_pairs: vec![["21".into(), "23".into()], ["31".into(), "32".into()]],
            twin_month: 6,
            region_patches: 6.0,
            noise_std: 0.02,
            extent_m: DEFAULT_EXTENT_M,
            change_pair: true,
            change_from: "22".into(),
            change_to: "12".into(),
            change_side: 0.4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SynthStamp {
    seed: u64,
    config: SynthConfig,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub records: usize,
    pub change: Option<ChangePair>,
}

/// Two dates of the same tile; only the cells flagged in `changed` differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeTruth {
    pub tile_id: String,
    pub grid_n: usize,
    pub from_class: usize,
    pub to_class: usize,
    pub row0: usize,
    pub col0: usize,
    pub side: usize,
    pub changed: Vec<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct ChangePair {
    pub dir: PathBuf,
    pub truth: ChangeTruth,
}

impl ChangePair {
    /// Raster of date `"A"` or `"B"` at `month`.
    pub fn raster_path(&self, date: &str, month: u8) -> PathBuf {
        self.dir.join(format!("{date}_m{month:02}.tlc"))
    }
}

#[derive(Clone, Debug)]
struct Phenology {
    offset: f64,
    amp: f64,
    peak: f64,
    /// Twin members mirror their partner around this month's value.
    mirror_of: Option<Box<Phenology>>,
    mirror_month: f64,
}

impl Phenology {
    fn seasonal(offset: f64, amp: f64, peak: f64) -> Self {
        Self {
            offset,
            amp,
            peak,
            mirror_of: None,
            mirror_month: 0.0,
        }
    }

    fn value(&self, month: u8) -> f64 {
        match &self.mirror_of {
            Some(partner) => 2.0 * partner.value_at(self.mirror_month) - partner.value(month),
            None => self.value_at(month as f64),
        }
    }

    fn value_at(&self, month: f64) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * (month - self.peak) / 12.0;
        self.offset + self.amp * (0.5 + 0.5 * phase.cos())
    }
}

#[derive(Clone, Debug)]
struct Signature {
    base: [f64; 4],
    curve: Phenology,
}

impl Signature {
    fn reflectance(&self, month: u8) -> [f32; 4] {
        let v = self.curve.value(month);
        std::array::from_fn(|c| (self.base[c] + v * VEG_RESPONSE[c]) as f32)
    }
}

/// Signatures indexed by LEVEL2 class order.
fn base_signatures() -> Vec<Signature> {
    let table: [([f64; 4], f64, f64, f64); 15] = [
        ([0.30, 0.28, 0.26, 0.30], 0.1, 0.0, 6.0),  // 11 urban fabric
        ([0.42, 0.40, 0.40, 0.38], 0.0, 0.0, 6.0),  // 12 industrial
        ([0.52, 0.46, 0.36, 0.44], 0.0, 0.0, 6.0),  // 13 mine, dump
        ([0.20, 0.24, 0.18, 0.22], 0.3, 0.4, 6.0),  // 14 green urban
        ([0.24, 0.21, 0.14, 0.18], 0.1, 0.8, 6.0),  // 21 arable
        ([0.30, 0.26, 0.12, 0.24], 0.2, 0.5, 9.0),  // 22 permanent crops
        ([0.24, 0.21, 0.14, 0.18], 0.1, 0.8, 6.0),  // 23 pastures
        ([0.20, 0.30, 0.22, 0.20], 0.2, 0.6, 4.0),  // 24 heterogeneous agriculture
        ([0.07, 0.11, 0.05, 0.20], 0.5, 0.4, 6.0),  // 31 forests
        ([0.07, 0.11, 0.05, 0.20], 0.5, 0.4, 6.0),  // 32 scrub
        ([0.62, 0.58, 0.54, 0.52], 0.0, 0.05, 6.0), // 33 open spaces
        ([0.12, 0.18, 0.24, 0.14], 0.2, 0.3, 8.0),  // 41 inland wetlands
        ([0.16, 0.15, 0.30, 0.10], 0.1, 0.1, 7.0),  // 42 maritime wetlands
        ([0.04, 0.08, 0.10, 0.02], 0.0, 0.0, 6.0),  // 51 inland waters
        ([0.03, 0.05, 0.17, 0.01], 0.0, 0.0, 6.0),  // 52 marine waters
    ];
    table
        .iter()
        .map(|&(base, offset, amp, peak)| Signature {
            base,
            curve: Phenology::seasonal(offset, amp, peak),
        })
        .collect()
}

/// SplitMix64 over a seed and a list of tags.
pub(crate) fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_LAYOUT: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_CHANGE: u64 = 3;

/// Resolved generator state shared by every tile.
struct Generator {
    config: SynthConfig,
    seed: u64,
    signatures: Vec<Signature>,
    painted: Vec<usize>,
}

impl Generator {
    fn new(config: &SynthConfig, seed: u64) -> Result<Self> {
        if config.classes == 0 || config.classes > Level::Level2.cardinality() {
            return Err(Error::config("classes", "must be between 1 and 15"));
        }
        if config.tiles == 0 {
            return Err(Error::config("tiles", "must be at least 1"));
        }
        if config.grid_n == 0 || config.patch_px == 0 {
            return Err(Error::config("grid_n", "grid_n and patch_px must be positive"));
        }
        if !(config.region_patches > 0.0) {
            return Err(Error::config("region_patches", "must be positive"));
        }
        if !(1..=MONTHS).contains(&config.twin_month) {
            return Err(Error::config("twin_month", "must be within 1..=12"));
        }
        if !(config.noise_std >= 0.0) {
            return Err(Error::config("noise_std", "must be non-negative"));
        }
        let level2 = Ontology::builtin().level(Level::Level2);
        let painted: Vec<usize> = (0..config.classes).collect();
        let lookup = |field: &str, code: &str| -> Result<usize> {
            level2
                .index_of(code)
                .filter(|i| *i < config.classes)
                .ok_or_else(|| Error::config(field, format!("class `{code}` is not among the painted classes")))
        };

        let mut signatures = base_signatures();
        let mut twinned = vec![false; 15];
        for [a, b] in &config.twin_pairs {
            let (ia, ib) = (lookup("twin_pairs", a)?, lookup("twin_pairs", b)?);
            if ia == ib || twinned[ia] || twinned[ib] {
                return Err(Error::config("twin_pairs", format!("pair ({a}, {b}) overlaps another pair")));
            }
            let partner = signatures[ia].curve.clone();
            if partner.amp == 0.0 {
                return Err(Error::config("twin_pairs", format!("class `{a}` has no seasonal cycle to mirror")));
            }
            signatures[ib] = Signature {
                base: signatures[ia].base,
                curve: Phenology {
                    mirror_of: Some(Box::new(partner)),
                    mirror_month: config.twin_month as f64,
                    ..Phenology::seasonal(0.0, 0.0, 0.0)
                },
            };
            twinned[ia] = true;
            twinned[ib] = true;
        }
        if config.change_pair {
            let from = lookup("change_from", &config.change_from)?;
            let to = lookup("change_to", &config.change_to)?;
            if from == to {
                return Err(Error::config("change_to", "must differ from change_from"));
            }
            if !(config.change_side > 0.0 && config.change_side <= 1.0) {
                return Err(Error::config("change_side", "must be in (0, 1]"));
            }
        }
        Ok(Self {
            config: config.clone(),
            seed,
            signatures,
            painted,
        })
    }

    fn tile_px(&self) -> usize {
        self.config.grid_n * self.config.patch_px
    }

    /// Nearest-site class map over the whole tile.
    fn layout(&self, tags: &[u64]) -> Vec<u16> {
        let side = self.tile_px();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, tags));
        let n_patches = (self.config.grid_n * self.config.grid_n) as f64;
        let n_sites = ((n_patches / self.config.region_patches).round() as usize).max(1);
        let sites: Vec<(f64, f64, u16)> = (0..n_sites)
            .map(|_| {
                let y = rng.random::<f64>() * side as f64;
                let x = rng.random::<f64>() * side as f64;
                let class = self.painted[rng.random_range(0..self.painted.len())] as u16;
                (y, x, class)
            })
            .collect();
        let mut map = vec![0u16; side * side];
        for y in 0..side {
            let cy = y as f64 + 0.5;
            for x in 0..side {
                let cx = x as f64 + 0.5;
                let mut best = f64::INFINITY;
                let mut class = 0;
                for &(sy, sx, c) in &sites {
                    let d = (sy - cy) * (sy - cy) + (sx - cx) * (sx - cx);
                    if d < best {
                        best = d;
                        class = c;
                    }
                }
                map[y * side + x] = class;
            }
        }
        map
    }

    fn render(&self, classes: &[u16], month: u8, noise_tags: &[u64]) -> Raster<f32> {
        let side = self.tile_px();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, noise_tags));
        let normal = Normal::new(0.0f64, self.config.noise_std).expect("validated std");
        let palette: Vec<[f32; 4]> = self.signatures.iter().map(|s| s.reflectance(month)).collect();
        let mut data = Vec::with_capacity(side * side * 4);
        for &class in classes {
            let sig = palette[class as usize];
            for band in sig {
                data.push(band + normal.sample(&mut rng) as f32);
            }
        }
        Raster::new(side, side, 4, data).expect("sized by construction")
    }

    fn labels(&self, classes: &[u16]) -> Vec<Vec<f64>> {
        let (g, p) = (self.config.grid_n, self.config.patch_px);
        let side = g * p;
        let mut counts = vec![vec![0usize; 15]; g * g];
        for y in 0..side {
            for x in 0..side {
                counts[(y / p) * g + x / p][classes[y * side + x] as usize] += 1;
            }
        }
        let area = (p * p) as f64;
        counts
            .into_iter()
            .map(|c| c.into_iter().map(|n| n as f64 / area).collect())
            .collect()
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn class_raster(classes: &[u16], side: usize) -> Raster<f32> {
    Raster::new(side, side, 1, classes.iter().map(|&c| c as f32).collect()).expect("square map")
}

/// Write a full synthetic corpus under `out`. Identical inputs give byte-identical output.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64, out: &Path) -> Result<SynthOutput> {
    let gen = Generator::new(config, seed)?;
    let rasters = out.join("rasters");
    let truth = out.join("truth");
    ensure_dir(&rasters)?;
    ensure_dir(&truth)?;

    let side = gen.tile_px();
    let g = config.grid_n;
    let per_tile: Vec<Vec<PatchRecord>> = (0..config.tiles)
        .into_par_iter()
        .map(|t| -> Result<Vec<PatchRecord>> {
            let tile_id = format!("T{t:03}");
            let classes = gen.layout(&[TAG_LAYOUT, t as u64]);
            class_raster(&classes, side).write_raw(&truth.join(format!("{tile_id}_classes.tlc")))?;
            let mut months = BTreeMap::new();
            for m in 1..=MONTHS {
                let path = rasters.join(format!("{tile_id}_m{m:02}.tlc"));
                gen.render(&classes, m, &[TAG_NOISE, t as u64, m as u64]).write_raw(&path)?;
                months.insert(m, path);
            }
            gen.labels(&classes)
                .into_iter()
                .enumerate()
                .map(|(i, probs)| {
                    let (row, col) = (i / g, i % g);
                    Ok(PatchRecord {
                        patch_id: format!("{tile_id}_r{row:02}_c{col:02}"),
                        tile_id: tile_id.clone(),
                        row,
                        col,
                        months: months.clone(),
                        label: LabelDistribution::new(Level::Level2, probs)?,
                        grid_n: Some(g),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<PatchRecord> = per_tile.into_iter().flatten().collect();

    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    let stamp = serde_json::to_string_pretty(&SynthStamp {
        seed,
        config: config.clone(),
    })
    .expect("config serializes");
    let stamp_path = out.join("synth_config.json");
    fs::write(&stamp_path, stamp).map_err(|e| Error::io(&stamp_path, e))?;

    let change = if config.change_pair {
        Some(write_change_pair(&gen, &out.join("change"))?)
    } else {
        None
    };

    Ok(SynthOutput {
        manifest,
        records: records.len(),
        change,
    })
}

fn write_change_pair(gen: &Generator, dir: &Path) -> Result<ChangePair> {
    ensure_dir(dir)?;
    let cfg = &gen.config;
    let level2 = Ontology::builtin().level(Level::Level2);
    let from = level2.index_of(&cfg.change_from).expect("validated");
    let to = level2.index_of(&cfg.change_to).expect("validated");
    let g = cfg.grid_n;
    let p = cfg.patch_px;
    let side_px = g * p;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gen.seed, &[TAG_CHANGE, 0]));
    let region = ((g as f64 * cfg.change_side).round() as usize).clamp(1, g);
    let row0 = rng.random_range(0..=g - region);
    let col0 = rng.random_range(0..=g - region);

    let base = gen.layout(&[TAG_CHANGE, 1]);
    let paint = |class: usize| {
        let mut map = base.clone();
        for y in row0 * p..(row0 + region) * p {
            for x in col0 * p..(col0 + region) * p {
                map[y * side_px + x] = class as u16;
            }
        }
        map
    };
    let before = paint(from);
    let after = paint(to);
    for m in 1..=MONTHS {
        let tags = [TAG_CHANGE, 2, m as u64];
        gen.render(&before, m, &tags).write_raw(&dir.join(format!("A_m{m:02}.tlc")))?;
        gen.render(&after, m, &tags).write_raw(&dir.join(format!("B_m{m:02}.tlc")))?;
    }
    let changed = (0..g)
        .map(|r| (0..g).map(|c| (row0..row0 + region).contains(&r) && (col0..col0 + region).contains(&c)).collect())
        .collect();
    let truth = ChangeTruth {
        tile_id: "CHG".into(),
        grid_n: g,
        from_class: from,
        to_class: to,
        row0,
        col0,
        side: region,
        changed,
    };
    let path = dir.join("truth.json");
    fs::write(&path, serde_json::to_string_pretty(&truth).expect("truth serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(ChangePair {
        dir: dir.to_path_buf(),
        truth,
    })
}

pub fn load_change_truth(path: &Path) -> Result<ChangeTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
