//! Manifests, tiling, dataset splits and the synthetic corpus.

pub mod loader;
pub mod manifest;
pub mod split;
pub mod synth;
pub mod tiling;

pub use loader::PatchLoader;
pub use manifest::{load_manifest, write_manifest, PatchRecord, MONTHS};
pub use split::{stratified_split, DatasetSplit, Subset, DEFAULT_FRACTIONS, DEFAULT_MASS_TOLERANCE};
pub use synth::{generate_synthetic_corpus, load_change_truth, ChangePair, ChangeTruth, SynthConfig, SynthOutput};
pub use tiling::{
    extract_patch, reassemble, tile_to_patches, GridPos, TileSpec, DEFAULT_EXTENT_M, DEFAULT_GRID_N, DEFAULT_PATCH_PX,
};
