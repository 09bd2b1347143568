//! In-memory multi-band rasters and their on-disk formats.
//!
//! The native format is a small raw tensor file:
//!
//! ```text
//! b"TLC1" | u32 height | u32 width | u32 channels | f32 pixels (row-major, channel-last)
//! ```
//!
//! all little-endian. Band order is R, G, B, N. GeoTIFF input is available
//! behind the `geotiff` cargo feature.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const RAW_MAGIC: &[u8; 4] = b"TLC1";
const RAW_HEADER_LEN: usize = 16;

/// Row-major, channel-last pixel buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} raster needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copy out the `h`×`w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape(format!(
                "window {h}x{w} at ({y0},{x0}) exceeds {}x{} raster",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(Self {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }

    /// Write `src` into this raster with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, src: &Raster<T>, y0: usize, x0: usize) -> Result<()> {
        if src.channels != self.channels || y0 + src.height > self.height || x0 + src.width > self.width {
            return Err(Error::Shape(format!(
                "cannot paste {}x{}x{} at ({y0},{x0}) into {}x{}x{}",
                src.height, src.width, src.channels, self.height, self.width, self.channels
            )));
        }
        let row = src.width * self.channels;
        for y in 0..src.height {
            let dst = ((y0 + y) * self.width + x0) * self.channels;
            self.data[dst..dst + row].copy_from_slice(&src.data[y * row..(y + 1) * row]);
        }
        Ok(())
    }

    /// Bilinear resampling with pixel-centre alignment. Returns a clone when
    /// the size already matches.
    pub fn resample(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Raster::zeros(height, width, self.channels);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = T::from_f64_lossy(fy - y0 as f64);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = T::from_f64_lossy(fx - x0 as f64);
                for c in 0..self.channels {
                    let top = self.get(y0, x0, c) * (T::one() - wx) + self.get(y0, x1, c) * wx;
                    let bottom = self.get(y1, x0, c) * (T::one() - wx) + self.get(y1, x1, c) * wx;
                    out.set(y, x, c, top * (T::one() - wy) + bottom * wy);
                }
            }
        }
        out
    }

    /// Channel-first copy (`C×H×W`), the layout the networks consume.
    pub fn to_chw(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); self.data.len()];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

impl Raster<f32> {
    pub fn encode_raw(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(RAW_HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(RAW_MAGIC);
        for dim in [self.height, self.width, self.channels] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::RasterFormat {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
            return Err(bad("missing TLC1 header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let expected = RAW_HEADER_LEN + h * w * c * 4;
        if bytes.len() != expected {
            return Err(bad(format!(
                "{h}x{w}x{c} raster needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let data = bytes[RAW_HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Raster::new(h, w, c, data)
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_raw()).map_err(|e| Error::io(path, e))
    }
}

/// Source of rasters for a particular file format.
pub trait RasterReader: Send + Sync {
    fn can_read(&self, path: &Path) -> bool;
    fn read(&self, path: &Path) -> Result<Raster<f32>>;
}

/// Reader for the raw `TLC1` tensor format.
#[derive(Debug, Default, Clone, Copy)]
pub struct RawTensorReader;

impl RasterReader for RawTensorReader {
    fn can_read(&self, path: &Path) -> bool {
        !matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("tif") | Some("tiff")
        )
    }

    fn read(&self, path: &Path) -> Result<Raster<f32>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::decode_raw(&bytes, path)
    }
}

#[cfg(feature = "geotiff")]
pub use self::geotiff::GeoTiffReader;

#[cfg(feature = "geotiff")]
mod geotiff {
    use std::fs::File;
    use std::path::Path;

    use tiff::decoder::{Decoder, DecodingResult};

    use super::{Raster, RasterReader};
    use crate::error::{Error, Result};

    /// Reads the first image of a (Geo)TIFF as float pixels. Georeferencing
    /// tags are ignored.
    #[derive(Debug, Default, Clone, Copy)]
    pub struct GeoTiffReader;

    impl RasterReader for GeoTiffReader {
        fn can_read(&self, path: &Path) -> bool {
            matches!(
                path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("tif") | Some("tiff")
            )
        }

        fn read(&self, path: &Path) -> Result<Raster<f32>> {
            let bad = |message: String| Error::RasterFormat {
                path: path.to_path_buf(),
                message,
            };
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut dec = Decoder::new(file).map_err(|e| bad(e.to_string()))?;
            let (w, h) = dec.dimensions().map_err(|e| bad(e.to_string()))?;
            let (w, h) = (w as usize, h as usize);
            let data: Vec<f32> = match dec.read_image().map_err(|e| bad(e.to_string()))? {
                DecodingResult::U8(v) => v.into_iter().map(|x| x as f32 / 255.0).collect(),
                DecodingResult::U16(v) => v.into_iter().map(|x| x as f32 / 10000.0).collect(),
                DecodingResult::F32(v) => v,
                DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
                _ => return Err(bad("unsupported sample format".into())),
            };
            if h * w == 0 || data.len() % (h * w) != 0 {
                return Err(bad("pixel count does not match dimensions".into()));
            }
            Raster::new(h, w, data.len() / (h * w), data)
        }
    }
}

/// Dispatches to the first registered reader that accepts a path.
pub struct RasterRegistry {
    readers: Vec<Box<dyn RasterReader>>,
}

impl Default for RasterRegistry {
    fn default() -> Self {
        #[allow(unused_mut)]
        let mut readers: Vec<Box<dyn RasterReader>> = vec![Box::new(RawTensorReader)];
        #[cfg(feature = "geotiff")]
        readers.insert(0, Box::new(GeoTiffReader));
        Self { readers }
    }
}

impl RasterRegistry {
    pub fn register(&mut self, reader: Box<dyn RasterReader>) {
        self.readers.insert(0, reader);
    }

    pub fn read(&self, path: &Path) -> Result<Raster<f32>> {
        let reader = self.readers.iter().find(|r| r.can_read(path)).ok_or_else(|| Error::RasterFormat {
            path: path.to_path_buf(),
            message: "no reader registered for this file type".into(),
        })?;
        reader.read(path)
    }
}

/// Read with the default registry.
pub fn read_raster(path: &Path) -> Result<Raster<f32>> {
    RasterRegistry::default().read(path)
}
