//! Raster grids, the RAS1 container, forest masks, survey patches and the
//! synthetic scene generator.

mod format;
mod patches;
mod synthetic;

pub use format::{decode_raster, encode_raster, read_raster, write_raster, HEADER_LEN, MAGIC};
pub use patches::{read_patch_csv, write_patch_csv, Patch, PatchTable};
pub use synthetic::{gen_scene, gen_synthetic_scene, read_scene, write_scene, SceneParams, SyntheticScene, PIXEL_AREA_HA};

use crate::error::{contract, Error, Result};

/// Forest value in a binarized mask.
pub const FOREST: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
    U32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
            DType::U32 => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            2 => Some(DType::U32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::U8(v) => v.len(),
            RasterData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            RasterData::F32(_) => DType::F32,
            RasterData::U8(_) => DType::U8,
            RasterData::U32(_) => DType::U32,
        }
    }
}

/// `height × width × channels` grid, band-interleaved by pixel, with an optional
/// per-pixel nodata flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: RasterData,
    nodata: Option<Vec<bool>>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: RasterData) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} raster needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data, nodata: None })
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, v: Vec<f32>) -> Result<Self> {
        Self::new(height, width, channels, RasterData::F32(v))
    }

    pub fn from_u8(height: usize, width: usize, v: Vec<u8>) -> Result<Self> {
        Self::new(height, width, 1, RasterData::U8(v))
    }

    pub fn from_u32(height: usize, width: usize, v: Vec<u32>) -> Result<Self> {
        Self::new(height, width, 1, RasterData::U32(v))
    }

    /// Builds a single-band f32 raster from `f64` values.
    pub fn from_f64_band(height: usize, width: usize, v: &[f64]) -> Result<Self> {
        Self::from_f32(height, width, 1, v.iter().map(|&x| x as f32).collect())
    }

    pub fn with_nodata(mut self, nodata: Vec<bool>) -> Result<Self> {
        if nodata.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "nodata mask has {} entries for {} pixels",
                nodata.len(),
                self.height * self.width
            )));
        }
        self.nodata = Some(nodata);
        Ok(self)
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

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    pub fn nodata(&self) -> Option<&[bool]> {
        self.nodata.as_deref()
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn get(&self, pixel: usize, band: usize) -> f64 {
        let i = pixel * self.channels + band;
        match &self.data {
            RasterData::F32(v) => v[i] as f64,
            RasterData::U8(v) => v[i] as f64,
            RasterData::U32(v) => v[i] as f64,
        }
    }

    /// All values widened to `f64`, in storage order.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            RasterData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            RasterData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            RasterData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// One band as a row-major plane.
    pub fn band(&self, band: usize) -> Vec<f64> {
        (0..self.pixels()).map(|p| self.get(p, band)).collect()
    }

    /// Channel-major `(C, H·W)` copy, the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f64> {
        (0..self.channels).flat_map(|b| self.band(b)).collect()
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u32(&self) -> Option<&[u32]> {
        match &self.data {
            RasterData::U32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Some(v),
            _ => None,
        }
    }

    /// Per-pixel forest flags of a single-band mask (`255` = forest).
    pub fn forest_flags(&self) -> Result<Vec<bool>> {
        if self.channels != 1 {
            return contract(format!("mask must be single-band, got {} bands", self.channels));
        }
        Ok((0..self.pixels()).map(|p| self.get(p, 0) == FOREST as f64).collect())
    }
}

/// Thresholds a single-band raster into a `{0, 255}` mask; `value >= threshold` is forest.
pub fn binarize_mask(r: &Raster, threshold: f64) -> Result<Raster> {
    if r.channels() != 1 {
        return contract(format!("binarize_mask needs one band, got {}", r.channels()));
    }
    let v = (0..r.pixels()).map(|p| if r.get(p, 0) >= threshold { FOREST } else { 0 }).collect();
    Raster::from_u8(r.height(), r.width(), v)
}
