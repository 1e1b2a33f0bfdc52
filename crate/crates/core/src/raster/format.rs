//! RAS1 container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RAS1"
//!      4     4  height   (u32 LE)
//!      8     4  width    (u32 LE)
//!     12     4  channels (u32 LE)
//!     16     1  dtype    (0 = f32 LE, 1 = u8, 2 = u32 LE)
//!     17     1  has_mask (0 | 1)
//!     18     3  reserved, zero
//!     21     -  payload, row-major band-interleaved-by-pixel
//!      -     -  nodata mask, height·width bytes (1 = nodata), when has_mask = 1
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{DType, Raster, RasterData};

pub const MAGIC: &[u8; 4] = b"RAS1";
pub const HEADER_LEN: usize = 21;

fn fmt_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset: offset as u64, msg: msg.into() })
}

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let n = r.data().len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * r.dtype().size() + r.pixels());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(r.height() as u32).to_le_bytes());
    out.extend_from_slice(&(r.width() as u32).to_le_bytes());
    out.extend_from_slice(&(r.channels() as u32).to_le_bytes());
    out.push(r.dtype().code());
    out.push(r.nodata().is_some() as u8);
    out.extend_from_slice(&[0, 0, 0]);
    match r.data() {
        RasterData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RasterData::U8(v) => out.extend_from_slice(v),
        RasterData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    if let Some(m) = r.nodata() {
        out.extend(m.iter().map(|&b| b as u8));
    }
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 {
        return fmt_err(bytes.len(), "truncated magic");
    }
    if &bytes[..4] != MAGIC {
        return fmt_err(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])));
    }
    if bytes.len() < HEADER_LEN {
        return fmt_err(bytes.len(), "truncated header");
    }
    let height = u32_at(bytes, 4) as usize;
    let width = u32_at(bytes, 8) as usize;
    let channels = u32_at(bytes, 12) as usize;
    let Some(dtype) = DType::from_code(bytes[16]) else {
        return fmt_err(16, format!("unknown dtype code {}", bytes[16]));
    };
    let has_mask = match bytes[17] {
        0 => false,
        1 => true,
        v => return fmt_err(17, format!("has_mask flag must be 0 or 1, got {v}")),
    };
    if let Some(i) = bytes[18..HEADER_LEN].iter().position(|&b| b != 0) {
        return fmt_err(18 + i, "reserved header byte is not zero");
    }
    let n = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Format { offset: 4, msg: "dimensions overflow".into() })?;
    let payload_end = HEADER_LEN + n * dtype.size();
    if bytes.len() < payload_end {
        return fmt_err(bytes.len(), format!("truncated payload: expected {payload_end} bytes"));
    }
    let p = &bytes[HEADER_LEN..payload_end];
    let data = match dtype {
        DType::F32 => RasterData::F32(p.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
        DType::U8 => RasterData::U8(p.to_vec()),
        DType::U32 => RasterData::U32(p.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
    };
    let mut end = payload_end;
    let mut nodata = None;
    if has_mask {
        end += height * width;
        if bytes.len() < end {
            return fmt_err(bytes.len(), format!("truncated nodata mask: expected {end} bytes"));
        }
        let mut m = Vec::with_capacity(height * width);
        for (i, &b) in bytes[payload_end..end].iter().enumerate() {
            match b {
                0 => m.push(false),
                1 => m.push(true),
                _ => return fmt_err(payload_end + i, format!("nodata byte must be 0 or 1, got {b}")),
            }
        }
        nodata = Some(m);
    }
    if bytes.len() != end {
        return fmt_err(end, format!("{} trailing bytes", bytes.len() - end));
    }
    let r = Raster::new(height, width, channels, data)?;
    match nodata {
        Some(m) => r.with_nodata(m),
        None => Ok(r),
    }
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raster(r))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput { path: path.to_path_buf(), msg: "raster not found".into() },
        _ => Error::Io(e),
    })?;
    decode_raster(&bytes)
}
