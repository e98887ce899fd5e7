//! Middlebury `.flo` files: `f32` magic 202021.25, `i32` width, `i32` height,
//! then row-major interleaved `f32` `(dx, dy)`; all little-endian.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FLO_MAGIC: f32 = 202021.25;

/// Upper bound on either dimension accepted by the reader.
pub const MAX_FLO_DIM: usize = 1 << 15;

pub fn encode_flo(frame: &Grid) -> Result<Vec<u8>> {
    if frame.channels() != 2 {
        return Err(Error::shape(format!(
            "flow frames have 2 channels, got {}",
            frame.channels()
        )));
    }
    let mut out = Vec::with_capacity(12 + frame.as_slice().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(frame.width() as i32).to_le_bytes());
    out.extend_from_slice(&(frame.height() as i32).to_le_bytes());
    for &v in frame.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Grid> {
    let header = bytes
        .get(..12)
        .ok_or_else(|| Error::format("flo.header", "file shorter than the 12-byte header"))?;
    let magic = f32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::format(
            "flo.magic",
            format!("expected 202021.25, found {magic}"),
        ));
    }
    let width = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(header[8..12].try_into().unwrap());
    let dim = |v: i32, field: &str| -> Result<usize> {
        if v <= 0 || v as usize > MAX_FLO_DIM {
            Err(Error::format(field, format!("out of range: {v}")))
        } else {
            Ok(v as usize)
        }
    };
    let width = dim(width, "flo.width")?;
    let height = dim(height, "flo.height")?;
    let expected = width * height * 2 * 4;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(Error::format(
            "flo.data",
            format!("expected {expected} bytes for {width}x{height}, found {}", body.len()),
        ));
    }
    let mut data = Vec::with_capacity(width * height * 2);
    for chunk in body.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format("flo.data", "non-finite displacement"));
        }
        data.push(f64::from(v));
    }
    Grid::from_vec(height, width, 2, data)
}
