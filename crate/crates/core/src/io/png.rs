//! PNG frames (RGB, 8-bit) and PNG masks (grayscale, nonzero = 1).

use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{BitMask2D, Grid};

/// Quantize a `[0, 1]` RGB frame to 8 bits and encode it as PNG.
pub fn encode_png_rgb(frame: &Grid) -> Result<Vec<u8>> {
    if frame.channels() != 3 {
        return Err(Error::shape("PNG frames must have 3 channels"));
    }
    let raw: Vec<u8> = frame.as_slice().iter().map(|&v| quantize(v)).collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, raw)
        .ok_or_else(|| Error::shape("frame buffer does not match its dimensions"))?;
    encode(DynamicImage::ImageRgb8(img))
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<Grid> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect();
    Grid::from_vec(h as usize, w as usize, 3, data)
}

pub fn encode_mask_png(mask: &BitMask2D) -> Result<Vec<u8>> {
    let raw = mask.bits().iter().map(|&b| b * 255).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::shape("mask buffer does not match its dimensions"))?;
    encode(DynamicImage::ImageLuma8(img))
}

/// Any PNG color type is accepted; a pixel is on when its luma is nonzero.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BitMask2D> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let bits = img.into_raw().into_iter().map(|b| u8::from(b != 0)).collect();
    BitMask2D::from_bits(h as usize, w as usize, bits)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?;
    Ok(out.into_inner())
}
