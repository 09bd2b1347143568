//! Synthetic corpus → mono model → temporal model → scores at every level.
//!
//! `cargo run --release -p temporal-lulc-core --example seasonal_pipeline -- OUT_DIR`

use std::path::PathBuf;
use std::time::Instant;

use temporal_lulc::data::{generate_synthetic_corpus, load_manifest, stratified_split, PatchLoader, Subset, SynthConfig};
use temporal_lulc::evaluation::{evaluate_distributions, ThresholdRule};
use temporal_lulc::models::{EncoderConfig, Model, TemporalHeadConfig};
use temporal_lulc::training::{train_mono, train_temporal, TrainConfig};
use temporal_lulc::Level;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> temporal_lulc::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "seasonal_run".into()));
    let t0 = Instant::now();
    let synth = SynthConfig {
        grid_n: env_or("GRID_N", 20),
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&synth, 7, &out.join("corpus"))?;
    let records = load_manifest(&corpus.manifest, true)?;
    let split = stratified_split(&records, [0.7, 0.2, 0.1], 7, 0.02)?;
    let (train, val, test) = (
        split.select(&records, Subset::Train),
        split.select(&records, Subset::Val),
        split.select(&records, Subset::Test),
    );
    println!("corpus: {} patches ({:.1}s)", records.len(), t0.elapsed().as_secs_f64());

    let config = TrainConfig {
        epochs: env_or("EPOCHS", 8),
        lr_mono: env_or("LR_MONO", 2e-3),
        lr_temporal: env_or("LR_TEMPORAL", 3e-3),
        lr_decay_gamma: 0.5,
        lr_decay_interval_epochs: env_or("INTERVAL", 4),
        batch_size: 32,
        seed: 7,
        encoder: EncoderConfig {
            backbone: "tiny".into(),
            patch_px: synth.patch_px,
            pretrained_init: false,
            ..EncoderConfig::default()
        },
        temporal: TemporalHeadConfig {
            lstm_hidden: 32,
            fc_hidden: 32,
            ..TemporalHeadConfig::default()
        },
        ..TrainConfig::default()
    };
    let loader = PatchLoader::new(synth.patch_px);
    let t = Instant::now();
    let (mono, _) = train_mono::<f32, _>(&train, &val, &config, Level::Level2, &loader)?;
    println!("mono trained ({:.1}s)", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (temporal, _) = train_temporal(&train, &val, &config, &mono, Level::Level2, &loader, None)?;
    println!("temporal trained ({:.1}s)", t.elapsed().as_secs_f64());

    let truth: Vec<_> = test.iter().map(|r| r.label.clone()).collect();
    for (name, model) in [("mono", Model::Mono(mono)), ("multi", Model::Temporal(temporal))] {
        let preds = model.predict_records(&loader, &test)?;
        let scores: Vec<String> = Level::ALL
            .iter()
            .map(|&l| {
                let r = evaluate_distributions(&preds, &truth, l, ThresholdRule::default()).unwrap();
                format!("{l} {:.4}", r.micro_f1)
            })
            .collect();
        println!("{name}: {}", scores.join("  "));
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
