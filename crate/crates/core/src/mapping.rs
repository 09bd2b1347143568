//! Tile-level classification maps and post-classification change detection.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PatchLoader, PatchRecord, TileSpec, MONTHS};
use crate::error::{Error, Result};
use crate::models::{Model, DEFAULT_MONO_MONTH};
use crate::ontology::{LabelDistribution, Level, Ontology};
use crate::scalar::Scalar;

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.5;
/// Placeholder replaced by the two-digit month in tile path templates.
pub const MONTH_PLACEHOLDER: &str = "{month}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub index: usize,
    pub code: String,
    pub name: String,
    pub color: [u8; 3],
}

pub fn legend(level: Level) -> Vec<LegendEntry> {
    Ontology::builtin()
        .level(level)
        .classes
        .iter()
        .enumerate()
        .map(|(index, c)| LegendEntry {
            index,
            code: c.code.clone(),
            name: c.name.clone(),
            color: c.color,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LulcMap {
    pub tile_id: String,
    pub grid_n: usize,
    pub level: Level,
    pub legend: Vec<LegendEntry>,
    /// Dominant class per cell, row-major.
    pub cells: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<Vec<Vec<f64>>>>,
    /// Month of a single-date map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
}

impl LulcMap {
    /// Assemble a map from per-cell distributions listed in row-major order.
    pub fn from_predictions<T: Scalar>(tile_id: &str, grid_n: usize, preds: &[LabelDistribution<T>], month: Option<u8>) -> Result<Self> {
        if preds.len() != grid_n * grid_n {
            return Err(Error::Shape(format!("{} predictions for a {grid_n}x{grid_n} grid", preds.len())));
        }
        let level = preds.first().map(|d| d.level()).ok_or_else(|| Error::Empty("no predictions".into()))?;
        if let Some(d) = preds.iter().find(|d| d.level() != level) {
            return Err(Error::LevelMismatch {
                expected: level,
                found: d.level(),
            });
        }
        let cells = preds.chunks(grid_n).map(|row| row.iter().map(|d| d.argmax()).collect()).collect();
        let dists = preds
            .chunks(grid_n)
            .map(|row| row.iter().map(|d| d.probs().iter().map(|p| p.as_f64()).collect()).collect())
            .collect();
        Ok(Self {
            tile_id: tile_id.to_string(),
            grid_n,
            level,
            legend: legend(level),
            cells,
            dists: Some(dists),
            month,
        })
    }

    /// Probability of the dominant class; 1 when distributions were dropped.
    pub fn confidence(&self, row: usize, col: usize) -> f64 {
        self.dists.as_ref().map_or(1.0, |d| d[row][col][self.cells[row][col]])
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("map serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: LulcMap = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if map.cells.len() != map.grid_n || map.cells.iter().any(|r| r.len() != map.grid_n) {
            return Err(Error::Shape(format!("map cells do not form a {0}x{0} grid", map.grid_n)));
        }
        Ok(map)
    }

    /// Each cell as a solid `cell_px`-wide block in its legend colour.
    pub fn save_png(&self, path: &Path, cell_px: usize) -> Result<()> {
        let colors: Vec<[u8; 3]> = self.legend.iter().map(|l| l.color).collect();
        let grid: Vec<Vec<[u8; 3]>> = self
            .cells
            .iter()
            .map(|r| r.iter().map(|&c| colors.get(c).copied().unwrap_or([0, 0, 0])).collect())
            .collect();
        write_blocks_png(path, &grid, cell_px)
    }
}

/// Where a tile's rasters live: one file, or one per month.
#[derive(Clone, Debug, PartialEq)]
pub enum TileSource {
    Single(PathBuf),
    Monthly(BTreeMap<u8, PathBuf>),
}

impl TileSource {
    /// A path containing `{month}` expands to twelve monthly paths (`01`..`12`).
    pub fn from_template(template: &str) -> Self {
        if template.contains(MONTH_PLACEHOLDER) {
            TileSource::Monthly(
                (1..=MONTHS)
                    .map(|m| (m, PathBuf::from(template.replace(MONTH_PLACEHOLDER, &format!("{m:02}")))))
                    .collect(),
            )
        } else {
            TileSource::Single(PathBuf::from(template))
        }
    }
}

/// Classify every cell of a tile. Single-date models read their training
/// month from a monthly source; temporal models need a monthly source.
pub fn predict_map<T: Scalar>(model: &Model<T>, source: &TileSource, tile: &TileSpec, loader: &PatchLoader) -> Result<LulcMap> {
    let (months, month) = match (model, source) {
        (Model::Mono(m), TileSource::Single(p)) => {
            let month = m.meta.month.unwrap_or(DEFAULT_MONO_MONTH);
            (BTreeMap::from([(month, p.clone())]), Some(month))
        }
        (Model::Mono(m), TileSource::Monthly(paths)) => {
            let month = m.meta.month.unwrap_or(DEFAULT_MONO_MONTH);
            let p = paths.get(&month).ok_or_else(|| Error::MissingMonth {
                patch_id: tile.tile_id.clone(),
                month,
            })?;
            (BTreeMap::from([(month, p.clone())]), Some(month))
        }
        (Model::Temporal(_), TileSource::Monthly(paths)) => (paths.clone(), None),
        (Model::Temporal(_), TileSource::Single(_)) => {
            return Err(Error::config("tile", format!("a temporal model needs a `{MONTH_PLACEHOLDER}` path template")));
        }
    };
    let label = LabelDistribution::uniform(Level::Level2);
    let records: Vec<PatchRecord> = (0..tile.grid_n * tile.grid_n)
        .map(|i| PatchRecord {
            patch_id: format!("{}_r{:02}_c{:02}", tile.tile_id, i / tile.grid_n, i % tile.grid_n),
            tile_id: tile.tile_id.clone(),
            row: i / tile.grid_n,
            col: i % tile.grid_n,
            months: months.clone(),
            label: label.clone(),
            grid_n: Some(tile.grid_n),
        })
        .collect();
    let preds = model.predict_records(loader, &records)?;
    LulcMap::from_predictions(&tile.tile_id, tile.grid_n, &preds, month)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellChange {
    Unchanged,
    Changed { from: usize, to: usize },
    /// Dominant classes differ but one side is below the confidence floor.
    Uncertain { from: usize, to: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeMap {
    pub tile_id: String,
    pub grid_n: usize,
    pub level: Level,
    pub legend: Vec<LegendEntry>,
    pub confidence_floor: f64,
    /// Labels of the compared maps, earlier first.
    pub epochs: [String; 2],
    pub cells: Vec<Vec<CellChange>>,
}

impl ChangeMap {
    pub fn changed_mask(&self) -> Vec<Vec<bool>> {
        self.cells
            .iter()
            .map(|r| r.iter().map(|c| matches!(c, CellChange::Changed { .. })).collect())
            .collect()
    }

    pub fn count(&self, pred: impl Fn(&CellChange) -> bool) -> usize {
        self.cells.iter().flatten().filter(|c| pred(c)).count()
    }

    pub fn n_changed(&self) -> usize {
        self.count(|c| matches!(c, CellChange::Changed { .. }))
    }

    pub fn n_uncertain(&self) -> usize {
        self.count(|c| matches!(c, CellChange::Uncertain { .. }))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("change map serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Unchanged cells dark grey, changed cells in the new class's colour,
    /// uncertain cells white.
    pub fn save_png(&self, path: &Path, cell_px: usize) -> Result<()> {
        let grid: Vec<Vec<[u8; 3]>> = self
            .cells
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        CellChange::Unchanged => [40, 40, 40],
                        CellChange::Changed { to, .. } => self.legend.get(*to).map_or([255, 0, 0], |l| l.color),
                        CellChange::Uncertain { .. } => [255, 255, 255],
                    })
                    .collect()
            })
            .collect();
        write_blocks_png(path, &grid, cell_px)
    }
}

/// Post-classification comparison of dominant classes.
pub fn change_detect(a: &LulcMap, b: &LulcMap, floor: f64) -> Result<ChangeMap> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::config("confidence_floor", "must lie in [0, 1]"));
    }
    if a.tile_id != b.tile_id {
        return Err(Error::Incompatible(format!("maps cover different tiles: {} and {}", a.tile_id, b.tile_id)));
    }
    if a.grid_n != b.grid_n {
        return Err(Error::Incompatible(format!("grid sizes differ: {} and {}", a.grid_n, b.grid_n)));
    }
    if a.level != b.level || a.legend != b.legend {
        return Err(Error::LevelMismatch {
            expected: a.level,
            found: b.level,
        });
    }
    let cells = (0..a.grid_n)
        .map(|r| {
            (0..a.grid_n)
                .map(|c| {
                    let (from, to) = (a.cells[r][c], b.cells[r][c]);
                    if from == to {
                        CellChange::Unchanged
                    } else if a.confidence(r, c) >= floor && b.confidence(r, c) >= floor {
                        CellChange::Changed { from, to }
                    } else {
                        CellChange::Uncertain { from, to }
                    }
                })
                .collect()
        })
        .collect();
    let label = |m: &LulcMap| m.month.map_or_else(|| "year".to_string(), |mo| format!("month {mo}"));
    Ok(ChangeMap {
        tile_id: a.tile_id.clone(),
        grid_n: a.grid_n,
        level: a.level,
        legend: a.legend.clone(),
        confidence_floor: floor,
        epochs: [label(a), label(b)],
        cells,
    })
}

/// Intersection over union of two boolean grids; 1 when both are empty.
pub fn mask_iou(a: &[Vec<bool>], b: &[Vec<bool>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Shape("masks differ in shape".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn write_blocks_png(path: &Path, grid: &[Vec<[u8; 3]>], cell_px: usize) -> Result<()> {
    let cell_px = cell_px.max(1);
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("nothing to render".into()));
    }
    let (w, h) = (cols * cell_px, rows * cell_px);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in grid {
        let line: Vec<u8> = row.iter().flat_map(|c| c.repeat(cell_px)).collect();
        for _ in 0..cell_px {
            pixels.extend_from_slice(&line);
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer.write_image_data(&pixels).map_err(|e| Error::Png(e.to_string()))
}
