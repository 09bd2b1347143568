//! Reading patch rasters referenced by manifest records.

use std::path::{Path, PathBuf};

use crate::data::manifest::PatchRecord;
use crate::data::tiling::{extract_patch, GridPos, DEFAULT_PATCH_PX};
use crate::error::{Error, Result};
use crate::raster::{Raster, RasterRegistry};

pub struct PatchLoader {
    registry: RasterRegistry,
    /// Side of every returned patch in pixels.
    pub patch_px: usize,
    /// Resample tiles whose size is not a multiple of their grid.
    pub resample_tiles: bool,
}

impl Default for PatchLoader {
    fn default() -> Self {
        Self::new(DEFAULT_PATCH_PX)
    }
}

impl PatchLoader {
    pub fn new(patch_px: usize) -> Self {
        Self {
            registry: RasterRegistry::default(),
            patch_px,
            resample_tiles: false,
        }
    }

    pub fn with_registry(mut self, registry: RasterRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn read(&self, path: &Path) -> Result<Raster<f32>> {
        self.registry.read(path)
    }

    /// Bring a native-resolution patch to `patch_px`×`patch_px`.
    pub fn fit(&self, patch: Raster<f32>) -> Raster<f32> {
        if patch.height() == self.patch_px && patch.width() == self.patch_px {
            patch
        } else {
            patch.resample(self.patch_px, self.patch_px)
        }
    }

    fn cut(&self, tile: &Raster<f32>, record: &PatchRecord, grid_n: usize) -> Result<Raster<f32>> {
        let pos = GridPos {
            row: record.row,
            col: record.col,
        };
        match extract_patch(tile, grid_n, pos) {
            Err(Error::NotDivisible { .. }) if self.resample_tiles => {
                let side = grid_n * self.patch_px;
                extract_patch(&tile.resample(side, side), grid_n, pos)
            }
            other => other,
        }
    }

    /// One patch per record for `month`, in record order. Consecutive records
    /// sharing a tile raster read it once.
    pub fn load_month<R: std::borrow::Borrow<PatchRecord>>(&self, records: &[R], month: u8) -> Result<Vec<Raster<f32>>> {
        let mut cached: Option<(PathBuf, Raster<f32>)> = None;
        let mut out = Vec::with_capacity(records.len());
        for record in records {
            let record = record.borrow();
            let path = record.month_path(month)?;
            let patch = match record.grid_n {
                None => self.read(path)?,
                Some(grid_n) => {
                    if cached.as_ref().map(|(p, _)| p.as_path()) != Some(path) {
                        cached = Some((path.to_path_buf(), self.read(path)?));
                    }
                    let tile = &cached.as_ref().expect("just filled").1;
                    self.cut(tile, record, grid_n)?
                }
            };
            if patch.channels() != 4 {
                return Err(Error::RasterFormat {
                    path: path.to_path_buf(),
                    message: format!("expected 4 bands (R,G,B,N), found {}", patch.channels()),
                });
            }
            out.push(self.fit(patch));
        }
        Ok(out)
    }
}
