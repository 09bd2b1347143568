//! Decomposition of square tiles into a regular grid of patches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

pub const DEFAULT_EXTENT_M: f64 = 8000.0;
pub const DEFAULT_GRID_N: usize = 40;
pub const DEFAULT_PATCH_PX: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_id: String,
    /// Side length of the tile on the ground.
    pub extent_m: f64,
    /// Patches per side.
    pub grid_n: usize,
    /// Pixels per patch side after ingestion.
    pub patch_px: usize,
}

impl TileSpec {
    pub fn new(tile_id: impl Into<String>) -> Self {
        Self {
            tile_id: tile_id.into(),
            extent_m: DEFAULT_EXTENT_M,
            grid_n: DEFAULT_GRID_N,
            patch_px: DEFAULT_PATCH_PX,
        }
    }

    pub fn with_grid(mut self, grid_n: usize, patch_px: usize) -> Self {
        self.grid_n = grid_n;
        self.patch_px = patch_px;
        self
    }

    pub fn patch_count(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn patch_ground_size_m(&self) -> f64 {
        self.extent_m / self.grid_n as f64
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

fn check_divisible<T: Scalar>(raster: &Raster<T>, grid_n: usize) -> Result<()> {
    if grid_n == 0 {
        return Err(Error::config("grid_n", "must be positive"));
    }
    let (h, w) = (raster.height(), raster.width());
    if h % grid_n != 0 || w % grid_n != 0 {
        return Err(Error::NotDivisible {
            height: h,
            width: w,
            grid_n,
            pad_h: h.div_ceil(grid_n) * grid_n,
            pad_w: w.div_ceil(grid_n) * grid_n,
        });
    }
    Ok(())
}

/// Cut a tile into `grid_n²` disjoint patches in row-major order.
///
/// With `resample` set, a tile whose size is not a multiple of `grid_n` is
/// first resampled to `grid_n * patch_px` pixels per side.
pub fn tile_to_patches<T: Scalar>(
    tile: &TileSpec,
    raster: &Raster<T>,
    resample: bool,
) -> Result<Vec<(GridPos, Raster<T>)>> {
    let resampled;
    let raster = match check_divisible(raster, tile.grid_n) {
        Ok(()) => raster,
        Err(Error::NotDivisible { .. }) if resample => {
            let side = tile.grid_n * tile.patch_px;
            resampled = raster.resample(side, side);
            &resampled
        }
        Err(e) => return Err(e),
    };
    let ph = raster.height() / tile.grid_n;
    let pw = raster.width() / tile.grid_n;
    let mut out = Vec::with_capacity(tile.patch_count());
    for row in 0..tile.grid_n {
        for col in 0..tile.grid_n {
            out.push((GridPos { row, col }, raster.crop(row * ph, col * pw, ph, pw)?));
        }
    }
    Ok(out)
}

/// Cut a single patch out of a tile raster.
pub fn extract_patch<T: Scalar>(raster: &Raster<T>, grid_n: usize, pos: GridPos) -> Result<Raster<T>> {
    check_divisible(raster, grid_n)?;
    if pos.row >= grid_n || pos.col >= grid_n {
        return Err(Error::Shape(format!(
            "grid position ({}, {}) outside a {grid_n}x{grid_n} grid",
            pos.row, pos.col
        )));
    }
    let ph = raster.height() / grid_n;
    let pw = raster.width() / grid_n;
    raster.crop(pos.row * ph, pos.col * pw, ph, pw)
}

/// Inverse of [`tile_to_patches`].
pub fn reassemble<T: Scalar>(patches: &[(GridPos, Raster<T>)], grid_n: usize) -> Result<Raster<T>> {
    let first = patches
        .first()
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Empty("no patches to reassemble".into()))?;
    if patches.len() != grid_n * grid_n {
        return Err(Error::Shape(format!(
            "{} patches cannot fill a {grid_n}x{grid_n} grid",
            patches.len()
        )));
    }
    let (ph, pw, c) = (first.height(), first.width(), first.channels());
    let mut tile = Raster::zeros(ph * grid_n, pw * grid_n, c);
    for (pos, patch) in patches {
        if patch.height() != ph || patch.width() != pw {
            return Err(Error::Shape("patches differ in size".into()));
        }
        tile.paste(patch, pos.row * ph, pos.col * pw)?;
    }
    Ok(tile)
}
