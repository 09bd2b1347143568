//! JSON-lines patch manifests.
//!
//! One record per line:
//!
//! ```json
//! {"patch_id": "T000_r00_c00", "tile_id": "T000", "row": 0, "col": 0,
//!  "months": {"1": "rasters/T000_m01.tlc", "...": "...", "12": "rasters/T000_m12.tlc"},
//!  "label": {"level": "LEVEL2", "probs": [15 floats]},
//!  "grid_n": 40}
//! ```
//!
//! `grid_n` is optional. When present, each month path points at a whole tile
//! raster and the patch is cut out at `(row, col)`; when absent the path
//! holds the patch alone. Relative paths resolve against the manifest's
//! directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::data::tiling::DEFAULT_GRID_N;
use crate::error::{Error, Result};
use crate::ontology::{LabelDistribution, Level};

pub const MONTHS: u8 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub patch_id: String,
    pub tile_id: String,
    pub row: usize,
    pub col: usize,
    /// Month index (1..=12) to raster path.
    pub months: BTreeMap<u8, PathBuf>,
    pub label: LabelDistribution<f64>,
    /// Patch grid of the referenced tile rasters, if they are whole tiles.
    pub grid_n: Option<usize>,
}

impl PatchRecord {
    pub fn month_path(&self, month: u8) -> Result<&Path> {
        self.months.get(&month).map(PathBuf::as_path).ok_or_else(|| Error::MissingMonth {
            patch_id: self.patch_id.clone(),
            month,
        })
    }

    /// Fails naming the first absent month.
    pub fn require_all_months(&self) -> Result<()> {
        for m in 1..=MONTHS {
            self.month_path(m)?;
        }
        Ok(())
    }

    fn to_json(&self, base: &Path) -> Value {
        let months: Map<String, Value> = self
            .months
            .iter()
            .map(|(m, p)| {
                let rel = p.strip_prefix(base).unwrap_or(p);
                (m.to_string(), Value::String(rel.to_string_lossy().into_owned()))
            })
            .collect();
        let mut v = json!({
            "patch_id": self.patch_id,
            "tile_id": self.tile_id,
            "row": self.row,
            "col": self.col,
            "months": months,
            "label": {"level": self.label.level(), "probs": self.label.probs()},
        });
        if let Some(g) = self.grid_n {
            v["grid_n"] = json!(g);
        }
        v
    }
}

/// Parse and validate a manifest. With `strict`, every referenced raster must exist.
pub fn load_manifest(path: &Path, strict: bool) -> Result<Vec<PatchRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, line_no, base)?;
        if !seen.insert(record.patch_id.clone()) {
            return Err(manifest_err(line_no, "patch_id", format!("duplicate id `{}`", record.patch_id)));
        }
        records.push(record);
    }
    if strict {
        let missing: Vec<String> = records
            .iter()
            .filter(|r| r.months.values().any(|p| !p.exists()))
            .map(|r| r.patch_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingRasters(missing));
        }
    }
    Ok(records)
}

fn manifest_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_line(line: &str, line_no: usize, base: &Path) -> Result<PatchRecord> {
    let v: Value = serde_json::from_str(line).map_err(|e| manifest_err(line_no, "<line>", e.to_string()))?;
    let str_field = |name: &str| -> Result<String> {
        v.get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| manifest_err(line_no, name, "expected a string"))
    };
    let uint_field = |name: &str| -> Result<usize> {
        v.get(name)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| manifest_err(line_no, name, "expected a non-negative integer"))
    };

    let patch_id = str_field("patch_id")?;
    let tile_id = str_field("tile_id")?;
    let row = uint_field("row")?;
    let col = uint_field("col")?;
    let grid_n = match v.get("grid_n") {
        None | Some(Value::Null) => None,
        Some(_) => Some(uint_field("grid_n")?),
    };
    let bound = grid_n.unwrap_or(DEFAULT_GRID_N);
    if bound == 0 {
        return Err(manifest_err(line_no, "grid_n", "must be positive"));
    }
    if row >= bound {
        return Err(manifest_err(line_no, "row", format!("{row} outside a {bound}x{bound} grid")));
    }
    if col >= bound {
        return Err(manifest_err(line_no, "col", format!("{col} outside a {bound}x{bound} grid")));
    }

    let months_obj = v
        .get("months")
        .and_then(Value::as_object)
        .ok_or_else(|| manifest_err(line_no, "months", "expected an object of month -> path"))?;
    let mut months = BTreeMap::new();
    for (key, p) in months_obj {
        let m: u8 = key
            .parse()
            .ok()
            .filter(|m| (1..=MONTHS).contains(m))
            .ok_or_else(|| manifest_err(line_no, "months", format!("bad month key `{key}`")))?;
        let p = p
            .as_str()
            .ok_or_else(|| manifest_err(line_no, "months", format!("month {key}: expected a path string")))?;
        months.insert(m, base.join(p));
    }
    if months.is_empty() {
        return Err(manifest_err(line_no, "months", "no rasters listed"));
    }

    let label = v.get("label").ok_or_else(|| manifest_err(line_no, "label", "missing"))?;
    let level: Level = label
        .get("level")
        .and_then(Value::as_str)
        .ok_or_else(|| manifest_err(line_no, "label.level", "expected a string"))?
        .parse()
        .map_err(|e: Error| manifest_err(line_no, "label.level", e.to_string()))?;
    if level != Level::Level2 {
        return Err(manifest_err(line_no, "label.level", format!("ground truth must be LEVEL2, got {level}")));
    }
    let probs: Vec<f64> = label
        .get("probs")
        .and_then(Value::as_array)
        .ok_or_else(|| manifest_err(line_no, "label.probs", "expected an array"))?
        .iter()
        .map(|p| p.as_f64().ok_or_else(|| manifest_err(line_no, "label.probs", "non-numeric entry")))
        .collect::<Result<_>>()?;
    let label = LabelDistribution::new(level, probs).map_err(|e| {
        let msg = match e {
            Error::NotADistribution(m) => format!("label not a distribution: {m}"),
            other => format!("label not a distribution: {other}"),
        };
        manifest_err(line_no, "label.probs", msg)
    })?;

    Ok(PatchRecord {
        patch_id,
        tile_id,
        row,
        col,
        months,
        label,
        grid_n,
    })
}

/// Write records as JSON lines, storing raster paths relative to the manifest directory where possible.
pub fn write_manifest(path: &Path, records: &[PatchRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json(base)).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
