use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use temporal_lulc::data::{
    generate_synthetic_corpus, load_change_truth, load_manifest, stratified_split, DatasetSplit, PatchLoader,
    PatchRecord, Subset, SynthConfig, TileSpec, DEFAULT_FRACTIONS, DEFAULT_GRID_N, DEFAULT_MASS_TOLERANCE,
};
use temporal_lulc::evaluation::{evaluate_distributions, tau_sweep, EvalReport, ThresholdRule, DEFAULT_TAU};
use temporal_lulc::mapping::{change_detect, mask_iou, predict_map, LulcMap, TileSource, DEFAULT_CONFIDENCE_FLOOR};
use temporal_lulc::models::{ArtifactMeta, Model, MonoModel};
use temporal_lulc::preprocess::compute_channel_stats;
use temporal_lulc::training::{train_mono, train_temporal, TrainConfig};
use temporal_lulc::{Level, Ontology, Scalar};

use crate::run::{ensure_dir, load_config, write_json, CliError, CliResult, Run};
use crate::{Cli, Command, Global};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn of_artifact(dir: &Path) -> CliResult<Self> {
        match ArtifactMeta::load(dir)?.dtype.as_str() {
            "f64" => Ok(Dtype::F64),
            _ => Ok(Dtype::F32),
        }
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("must lie strictly between 0 and 1".into())
    }
}

fn closed_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of tiles; overrides the config file.
    #[arg(long)]
    pub tiles: Option<usize>,
    /// Patches per tile side; overrides the config file.
    #[arg(long)]
    pub grid_n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fail when any referenced raster is missing.
    #[arg(long)]
    pub strict: bool,
    /// Train/val/test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub fractions: Option<Vec<f64>>,
    /// Month whose training patches feed the channel statistics.
    #[arg(long, default_value_t = 6)]
    pub month: u8,
    /// Patch side after ingestion.
    #[arg(long, default_value_t = 8)]
    pub patch_px: usize,
}

#[derive(Args, Debug)]
pub struct TrainMonoArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Existing split.json; otherwise a stratified split is drawn with the seed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub dtype: Dtype,
}

#[derive(Args, Debug)]
pub struct TrainTemporalArgs {
    /// Trained single-date artifact directory.
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the encoder's split.json.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Directory for cached feature sequences.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model artifact directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the model's split.json; without one the whole manifest is scored.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = open_unit)]
    pub tau: f64,
    /// Also report micro-F1 for tau in 0.05..=0.50.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Model artifact directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Tile raster, or a path template containing `{month}`.
    #[arg(long)]
    pub tile: String,
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Defaults to the tile file name.
    #[arg(long)]
    pub tile_id: Option<String>,
    /// Pixels per cell side in PNG output.
    #[arg(long, default_value_t = 8)]
    pub cell_px: usize,
}

#[derive(Args, Debug)]
pub struct ChangeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Earlier tile (path or `{month}` template).
    #[arg(long)]
    pub tile_a: String,
    /// Later tile (path or `{month}` template).
    #[arg(long)]
    pub tile_b: String,
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Shared by both dates; defaults to the earlier tile's file name.
    #[arg(long)]
    pub tile_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_FLOOR, value_parser = closed_unit)]
    pub floor: f64,
    /// Ground-truth change mask (truth.json) to score against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub cell_px: usize,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Report of the single-date model.
    #[arg(long)]
    pub mono: PathBuf,
    /// Report of the multi-temporal model.
    #[arg(long)]
    pub multi: PathBuf,
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let (name, out_is_dir) = match &cli.command {
        Command::Synth(_) => ("synth", true),
        Command::Ingest(_) => ("ingest", true),
        Command::TrainMono(_) => ("train-mono", true),
        Command::TrainTemporal(_) => ("train-temporal", true),
        Command::Eval(_) => ("eval", false),
        Command::Map(_) => ("map", false),
        Command::Change(_) => ("change", false),
        Command::Compare(_) => ("compare", false),
    };
    let mut run = Run::new(name);
    if let Some(out) = &g.out {
        run.write_to(out, out_is_dir);
    }
    if let Some(seed) = g.seed {
        run.seed(seed);
    }
    let result = match &cli.command {
        Command::Synth(a) => synth(g, a, &mut run),
        Command::Ingest(a) => ingest(g, a, &mut run),
        Command::TrainMono(a) => match a.dtype {
            Dtype::F32 => train_mono_cmd::<f32>(g, a, &mut run),
            Dtype::F64 => train_mono_cmd::<f64>(g, a, &mut run),
        },
        Command::TrainTemporal(a) => match Dtype::of_artifact(&a.encoder) {
            Ok(Dtype::F32) => train_temporal_cmd::<f32>(g, a, &mut run),
            Ok(Dtype::F64) => train_temporal_cmd::<f64>(g, a, &mut run),
            Err(e) => Err(e),
        },
        Command::Eval(a) => match Dtype::of_artifact(&a.model) {
            Ok(Dtype::F32) => eval::<f32>(g, a, &mut run),
            Ok(Dtype::F64) => eval::<f64>(g, a, &mut run),
            Err(e) => Err(e),
        },
        Command::Map(a) => match Dtype::of_artifact(&a.model) {
            Ok(Dtype::F32) => map::<f32>(g, a, &mut run),
            Ok(Dtype::F64) => map::<f64>(g, a, &mut run),
            Err(e) => Err(e),
        },
        Command::Change(a) => match Dtype::of_artifact(&a.model) {
            Ok(Dtype::F32) => change::<f32>(g, a, &mut run),
            Ok(Dtype::F64) => change::<f64>(g, a, &mut run),
            Err(e) => Err(e),
        },
        Command::Compare(a) => compare(g, a, &mut run),
    };
    run.finish(&result);
    result
}

fn require_out(g: &Global) -> CliResult<&Path> {
    g.out.as_deref().ok_or_else(|| CliError::config("--out", "required flag missing"))
}

fn print_json<V: Serialize>(value: &V) {
    println!("{}", serde_json::to_string(value).expect("serialize"));
}

fn synth(g: &Global, a: &SynthArgs, run: &mut Run) -> CliResult<()> {
    let out = require_out(g)?;
    let mut config: SynthConfig = load_config(g.config.as_deref())?;
    if let Some(t) = a.tiles {
        config.tiles = t;
    }
    if let Some(n) = a.grid_n {
        config.grid_n = n;
    }
    let seed = g.seed.unwrap_or(0);
    run.config(&config);
    run.seed(seed);
    ensure_dir(out)?;
    let corpus = generate_synthetic_corpus(&config, seed, out)?;
    run.output(&corpus.manifest);
    print_json(&json!({
        "manifest": corpus.manifest,
        "records": corpus.records,
        "change_dir": corpus.change.as_ref().map(|c| &c.dir),
    }));
    Ok(())
}

fn split_for(records: &[PatchRecord], path: Option<&Path>, fractions: [f64; 3], seed: u64) -> CliResult<DatasetSplit> {
    match path {
        Some(p) => Ok(DatasetSplit::load(p)?),
        None => Ok(stratified_split(records, fractions, seed, DEFAULT_MASS_TOLERANCE)?),
    }
}

fn ingest(g: &Global, a: &IngestArgs, run: &mut Run) -> CliResult<()> {
    let seed = g.seed.unwrap_or(0);
    let fractions = match a.fractions.as_deref() {
        None => DEFAULT_FRACTIONS,
        Some(&[x, y, z]) => [x, y, z],
        Some(_) => return Err(CliError::config("--fractions", "expected three values")),
    };
    if !(1..=12).contains(&a.month) {
        return Err(CliError::config("--month", "must lie in 1..=12"));
    }
    run.input("manifest", &a.manifest);
    run.seed(seed);
    run.config(&json!({"strict": a.strict, "fractions": fractions, "month": a.month, "patch_px": a.patch_px}));
    let records = load_manifest(&a.manifest, a.strict)?;
    let split = split_for(&records, None, fractions, seed)?;
    let mut tiles: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *tiles.entry(r.tile_id.as_str()).or_default() += 1;
    }
    let mut summary = json!({
        "records": records.len(),
        "tiles": tiles.len(),
        "train": split.train.len(),
        "val": split.val.len(),
        "test": split.test.len(),
        "max_mass_deviation": split.max_mass_deviation(&records),
    });
    if let Some(out) = &g.out {
        ensure_dir(out)?;
        let train = split.select(&records, Subset::Train);
        let patches = PatchLoader::new(a.patch_px).load_month(&train, a.month)?;
        let stats = compute_channel_stats(patches.iter())?;
        let (split_path, stats_path, summary_path) = (out.join("split.json"), out.join("stats.json"), out.join("summary.json"));
        split.save(&split_path)?;
        stats.save(&stats_path)?;
        summary["stats"] = serde_json::to_value(&stats).expect("stats serialize");
        write_json(&summary_path, &summary)?;
        for p in [split_path, stats_path, summary_path] {
            run.output(&p);
        }
    }
    print_json(&summary);
    Ok(())
}

fn train_config(g: &Global) -> CliResult<TrainConfig> {
    let mut config: TrainConfig = load_config(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn train_mono_cmd<T: Scalar>(g: &Global, a: &TrainMonoArgs, run: &mut Run) -> CliResult<()> {
    let out = require_out(g)?;
    let config = train_config(g)?;
    let level = g.level.unwrap_or(Level::Level2);
    run.config(&config);
    run.seed(config.seed);
    run.input("manifest", &a.manifest);
    if let Some(s) = &a.split {
        run.input("split", s);
    }
    let records = load_manifest(&a.manifest, true)?;
    let split = split_for(&records, a.split.as_deref(), DEFAULT_FRACTIONS, config.seed)?;
    let train = split.select(&records, Subset::Train);
    let val = split.select(&records, Subset::Val);
    let loader = PatchLoader::new(config.encoder.patch_px);
    let (model, log) = train_mono::<T, _>(&train, &val, &config, level, &loader)?;
    ensure_dir(out)?;
    model.save(out)?;
    log.write_jsonl(&out.join("train_log.jsonl"))?;
    split.save(&out.join("split.json"))?;
    run.output(out);
    print_json(&json!({
        "artifact": out,
        "epochs": log.epochs.len(),
        "best_epoch": log.best_epoch,
        "best_val_micro_f1": log.epochs.get(log.best_epoch).and_then(|e| e.val_micro_f1),
        "wall_seconds": log.wall_seconds,
    }));
    Ok(())
}

fn train_temporal_cmd<T: Scalar>(g: &Global, a: &TrainTemporalArgs, run: &mut Run) -> CliResult<()> {
    let out = require_out(g)?;
    let config = train_config(g)?;
    run.config(&config);
    run.seed(config.seed);
    run.input("encoder", &a.encoder);
    run.input("manifest", &a.manifest);
    let encoder = MonoModel::<T>::load(&a.encoder)?;
    let level = g.level.unwrap_or(encoder.level());
    let split_path = a.split.clone().or_else(|| Some(a.encoder.join("split.json")).filter(|p| p.exists()));
    if let Some(s) = &split_path {
        run.input("split", s);
    }
    let records = load_manifest(&a.manifest, true)?;
    let split = split_for(&records, split_path.as_deref(), DEFAULT_FRACTIONS, config.seed)?;
    let train = split.select(&records, Subset::Train);
    let val = split.select(&records, Subset::Val);
    let loader = PatchLoader::new(encoder.patch_px());
    let (model, log) = train_temporal(&train, &val, &config, &encoder, level, &loader, a.cache_dir.as_deref())?;
    ensure_dir(out)?;
    model.save(out)?;
    log.write_jsonl(&out.join("train_log.jsonl"))?;
    split.save(&out.join("split.json"))?;
    run.output(out);
    print_json(&json!({
        "artifact": out,
        "epochs": log.epochs.len(),
        "best_epoch": log.best_epoch,
        "best_val_micro_f1": log.epochs.get(log.best_epoch).and_then(|e| e.val_micro_f1),
        "wall_seconds": log.wall_seconds,
    }));
    Ok(())
}

const SWEEP_TAUS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

fn eval<T: Scalar>(g: &Global, a: &EvalArgs, run: &mut Run) -> CliResult<()> {
    let rule = ThresholdRule::new(a.tau)?;
    run.input("model", &a.model);
    run.input("manifest", &a.manifest);
    run.config(&json!({"tau": a.tau, "subset": format!("{:?}", a.subset).to_lowercase(), "sweep": a.sweep}));
    let model = Model::<T>::load(&a.model)?;
    let level = g.level.unwrap_or(model.level());
    let records = load_manifest(&a.manifest, true)?;
    let split_path = a.split.clone().or_else(|| Some(a.model.join("split.json")).filter(|p| p.exists()));
    let subset: Vec<&PatchRecord> = match &split_path {
        Some(p) => {
            run.input("split", p);
            DatasetSplit::load(p)?.select(&records, a.subset)
        }
        None => {
            log::warn!("no split.json found; scoring all {} records", records.len());
            records.iter().collect()
        }
    };
    let preds = model.predict_records(&PatchLoader::new(model.patch_px()), &subset)?;
    let truth: Vec<_> = subset.iter().map(|r| r.label.clone()).collect();
    let report = evaluate_distributions(&preds, &truth, level, rule)?;
    if let Some(out) = &g.out {
        report.save(out)?;
        run.output(out);
    }
    let sweep = if a.sweep { Some(tau_sweep(&preds, &truth, level, &SWEEP_TAUS)?) } else { None };
    if let (Some(sweep), Some(out)) = (&sweep, &g.out) {
        let path = out.with_extension("sweep.json");
        let rows: Vec<_> = sweep.iter().map(|(tau, f1)| json!({"tau": tau, "micro_f1": f1})).collect();
        write_json(&path, &rows)?;
        run.output(&path);
    }
    print_json(&json!({
        "level": report.level,
        "tau": report.tau,
        "micro_f1": report.micro_f1,
        "n_patches": report.n_patches,
        "sweep": sweep,
    }));
    Ok(())
}

fn tile_id_of(template: &str) -> String {
    let stem = Path::new(template).file_stem().and_then(|s| s.to_str()).unwrap_or("tile");
    stem.split("_m").next().unwrap_or(stem).replace("{month}", "")
}

/// `.png` writes the image and a `.json` sidecar; anything else writes JSON only.
fn save_raster_output(
    out: &Path,
    run: &mut Run,
    png: impl FnOnce(&Path) -> temporal_lulc::Result<()>,
    json: impl FnOnce(&Path) -> temporal_lulc::Result<()>,
) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    if out.extension().and_then(|e| e.to_str()) == Some("png") {
        png(out)?;
        run.output(out);
        let sidecar = out.with_extension("json");
        json(&sidecar)?;
        run.output(&sidecar);
    } else {
        json(out)?;
        run.output(out);
    }
    Ok(())
}

fn predict_tile<T: Scalar>(model: &Model<T>, tile: &str, grid_n: usize, tile_id: String) -> CliResult<LulcMap> {
    let spec = TileSpec::new(tile_id).with_grid(grid_n, model.patch_px());
    Ok(predict_map(model, &TileSource::from_template(tile), &spec, &PatchLoader::new(model.patch_px()))?)
}

fn map<T: Scalar>(g: &Global, a: &MapArgs, run: &mut Run) -> CliResult<()> {
    let out = require_out(g)?;
    run.input("model", &a.model);
    run.input("tile", Path::new(&a.tile));
    run.config(&json!({"grid_n": a.grid_n, "cell_px": a.cell_px}));
    let model = Model::<T>::load(&a.model)?;
    let tile_id = a.tile_id.clone().unwrap_or_else(|| tile_id_of(&a.tile));
    let map = predict_tile(&model, &a.tile, a.grid_n, tile_id)?;
    save_raster_output(out, run, |p| map.save_png(p, a.cell_px), |p| map.save_json(p))?;
    let mut counts = vec![0usize; map.legend.len()];
    for &c in map.cells.iter().flatten() {
        counts[c] += 1;
    }
    let codes = Ontology::builtin().level(map.level).codes();
    let hist: BTreeMap<_, _> = codes.into_iter().zip(counts).filter(|(_, n)| *n > 0).collect();
    print_json(&json!({"tile_id": map.tile_id, "grid_n": map.grid_n, "level": map.level, "cells_per_class": hist}));
    Ok(())
}

fn change<T: Scalar>(g: &Global, a: &ChangeArgs, run: &mut Run) -> CliResult<()> {
    let out = require_out(g)?;
    run.input("model", &a.model);
    run.input("tile_a", Path::new(&a.tile_a));
    run.input("tile_b", Path::new(&a.tile_b));
    run.config(&json!({"grid_n": a.grid_n, "floor": a.floor, "cell_px": a.cell_px}));
    let model = Model::<T>::load(&a.model)?;
    let tile_id = a.tile_id.clone().unwrap_or_else(|| tile_id_of(&a.tile_a));
    let map_a = predict_tile(&model, &a.tile_a, a.grid_n, tile_id.clone())?;
    let map_b = predict_tile(&model, &a.tile_b, a.grid_n, tile_id)?;
    let change = change_detect(&map_a, &map_b, a.floor)?;
    save_raster_output(out, run, |p| change.save_png(p, a.cell_px), |p| change.save_json(p))?;
    let iou = match &a.truth {
        Some(p) => {
            run.input("truth", p);
            Some(mask_iou(&change.changed_mask(), &load_change_truth(p)?.changed)?)
        }
        None => None,
    };
    print_json(&json!({
        "changed": change.n_changed(),
        "uncertain": change.n_uncertain(),
        "cells": change.grid_n * change.grid_n,
        "iou": iou,
    }));
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareRow {
    code: String,
    name: String,
    mono: Option<f64>,
    multi: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Comparison {
    level: Level,
    tau: f64,
    micro_f1_mono: f64,
    micro_f1_multi: f64,
    classes: Vec<CompareRow>,
}

fn comparison(mono: &EvalReport, multi: &EvalReport) -> CliResult<Comparison> {
    if mono.level != multi.level {
        return Err(CliError::config("--multi", format!("level {} differs from {}", multi.level, mono.level)));
    }
    if mono.tau != multi.tau {
        log::warn!("reports use different thresholds ({} vs {})", mono.tau, multi.tau);
    }
    let classes = mono
        .counts
        .iter()
        .map(|c| CompareRow {
            code: c.code.clone(),
            name: c.name.clone(),
            mono: mono.per_class_f1.get(&c.code).copied(),
            multi: multi.per_class_f1.get(&c.code).copied(),
        })
        .collect();
    Ok(Comparison {
        level: mono.level,
        tau: mono.tau,
        micro_f1_mono: mono.micro_f1,
        micro_f1_multi: multi.micro_f1,
        classes,
    })
}

fn render_table(c: &Comparison) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let width = c.classes.iter().map(|r| r.code.len() + r.name.len() + 1).max().unwrap_or(0).max(8);
    let mut s = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", format!("{}", c.level), "mono", "multi", "delta");
    for r in &c.classes {
        let delta = r.mono.zip(r.multi).map(|(a, b)| b - a);
        s += &format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}\n",
            format!("{} {}", r.code, r.name),
            cell(r.mono),
            cell(r.multi),
            delta.map(|d| format!("{d:+.4}")).unwrap_or_else(|| "-".into())
        );
    }
    s += &format!(
        "{:<width$}  {:>8.4}  {:>8.4}  {:>+8.4}\n",
        "micro-F1",
        c.micro_f1_mono,
        c.micro_f1_multi,
        c.micro_f1_multi - c.micro_f1_mono
    );
    s
}

fn compare(g: &Global, a: &CompareArgs, run: &mut Run) -> CliResult<()> {
    run.input("mono", &a.mono);
    run.input("multi", &a.multi);
    let c = comparison(&EvalReport::load(&a.mono)?, &EvalReport::load(&a.multi)?)?;
    print!("{}", render_table(&c));
    if let Some(out) = &g.out {
        write_json(out, &c)?;
        run.output(out);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use temporal_lulc::evaluation::report_from_sets;

    #[test]
    fn tile_ids_from_paths() {
        assert_eq!(tile_id_of("corpus/rasters/T003_m{month}.tlc"), "T003");
        assert_eq!(tile_id_of("x/A_m06.tlc"), "A");
        assert_eq!(tile_id_of("scene.tlc"), "scene");
    }

    #[test]
    fn comparison_pairs_classes_by_code() {
        let set = |v: &[usize]| v.iter().copied().collect();
        let rule = ThresholdRule::default();
        let mono = report_from_sets(&[set(&[0]), set(&[1])], &[set(&[0]), set(&[2])], Level::Level1, rule).unwrap();
        let multi = report_from_sets(&[set(&[0]), set(&[2])], &[set(&[0]), set(&[2])], Level::Level1, rule).unwrap();
        let c = comparison(&mono, &multi).unwrap();
        assert_eq!(c.classes.len(), Level::Level1.cardinality());
        assert_eq!(c.micro_f1_multi, 1.0);
        assert_eq!(c.classes[2].mono, Some(0.0));
        assert_eq!(c.classes[2].multi, Some(1.0));
        let table = render_table(&c);
        assert!(table.lines().last().unwrap().starts_with("micro-F1"));
        assert_eq!(table.lines().count(), Level::Level1.cardinality() + 2);
    }

    #[test]
    fn comparison_rejects_mixed_levels() {
        let set = |v: &[usize]| v.iter().copied().collect();
        let rule = ThresholdRule::default();
        let a = report_from_sets(&[set(&[0])], &[set(&[0])], Level::Level1, rule).unwrap();
        let b = report_from_sets(&[set(&[0])], &[set(&[0])], Level::Level2, rule).unwrap();
        assert!(matches!(comparison(&a, &b), Err(CliError::Config { .. })));
    }
}
