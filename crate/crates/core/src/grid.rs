//! Dense field primitives: frames, clips, flow fields, binary masks.
//!
//! Coordinates follow raster convention: `x` grows rightward, `y` downward,
//! and `(0, 0)` is the center of the top-left pixel. Every field is stored
//! row-major with interleaved channels.

use crate::error::{Error, Result};

/// Bilinear interpolation over a row-major `height × width × channels` slice.
///
/// Coordinates outside the grid clamp to the border, so sampling is total.
pub fn bilinear_sample_into(
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(data.len(), height * width * channels);
    debug_assert_eq!(out.len(), channels);
    let xc = clamp_coord(x, width);
    let yc = clamp_coord(y, height);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let idx = |xx: usize, yy: usize| (yy * width + xx) * channels;
    let (i00, i10, i01, i11) = (idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1));
    for (c, o) in out.iter_mut().enumerate() {
        let top = data[i00 + c] + fx * (data[i10 + c] - data[i00 + c]);
        let bottom = data[i01 + c] + fx * (data[i11 + c] - data[i01 + c]);
        *o = top + fy * (bottom - top);
    }
}

fn clamp_coord(v: f64, extent: usize) -> f64 {
    let max = (extent - 1) as f64;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, max)
    }
}

/// A single `height × width × channels` real-valued grid (an image or one flow frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape("grid dimensions must be nonzero"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
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

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn sample(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(x, y, &mut out);
        out
    }

    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) {
        bilinear_sample_into(&self.data, self.height, self.width, self.channels, x, y, out);
    }
}

/// An `L × H × W × 3` clip with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Grid>,
    /// Informational only.
    pub frame_rate: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Grid>, frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("a clip needs at least one frame"))?;
        let (h, w) = (first.height, first.width);
        for (i, f) in frames.iter().enumerate() {
            if f.channels != 3 || f.height != h || f.width != w {
                return Err(Error::shape(format!(
                    "frame {} is {}x{}x{}, expected {h}x{w}x3",
                    i + 1,
                    f.height,
                    f.width,
                    f.channels
                )));
            }
            if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "frame {} has values outside [0, 1]",
                    i + 1
                )));
            }
        }
        Ok(Self { frames, frame_rate })
    }

    /// `len` copies of one frame.
    pub fn constant(frame: &Grid, len: usize, frame_rate: f64) -> Result<Self> {
        Self::new(vec![frame.clone(); len.max(1)], frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn frame(&self, i: usize) -> &Grid {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Grid] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Grid> {
        self.frames
    }
}

/// Per-frame displacement relative to frame 1, channel order `(dx, dy)`.
///
/// `position in frame i = position in frame 1 + flow[i]`; frame 1 is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    len: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(len: usize, height: usize, width: usize) -> Self {
        Self {
            len,
            height,
            width,
            data: vec![0.0; len * height * width * 2],
        }
    }

    pub fn from_vec(len: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || height == 0 || width == 0 {
            return Err(Error::shape("flow dimensions must be nonzero"));
        }
        if data.len() != len * height * width * 2 {
            return Err(Error::shape(format!(
                "expected {} flow values for {len}x{height}x{width}x2, got {}",
                len * height * width * 2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("flow contains non-finite values"));
        }
        if data[..height * width * 2].iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("flow of frame 1 relative to itself must be zero"));
        }
        Ok(Self {
            len,
            height,
            width,
            data,
        })
    }

    /// Assemble from per-frame two-channel grids.
    pub fn from_frames(frames: &[Grid]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("flow needs at least one frame"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(frames.len() * h * w * 2);
        for (i, f) in frames.iter().enumerate() {
            if f.channels != 2 || f.height != h || f.width != w {
                return Err(Error::shape(format!(
                    "flow frame {} is {}x{}x{}, expected {h}x{w}x2",
                    i + 1,
                    f.height,
                    f.width,
                    f.channels
                )));
            }
            data.extend_from_slice(&f.data);
        }
        Self::from_vec(frames.len(), h, w, data)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.height * self.width * 2;
        &self.data[i * n..(i + 1) * n]
    }

    pub(crate) fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.height * self.width * 2;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn frame_grid(&self, i: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            channels: 2,
            data: self.frame(i).to_vec(),
        }
    }

    pub fn at(&self, i: usize, x: usize, y: usize) -> [f64; 2] {
        let j = ((i * self.height + y) * self.width + x) * 2;
        [self.data[j], self.data[j + 1]]
    }

    /// Bilinearly interpolated displacement of frame `i` at a fractional position.
    pub fn sample(&self, i: usize, x: f64, y: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        bilinear_sample_into(self.frame(i), self.height, self.width, 2, x, y, &mut out);
        out
    }
}

/// Binary `H × W` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask2D {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BitMask2D {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} mask bits for {height}x{width}, got {}",
                height * width,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(x, y)));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_shape(&self, other: &BitMask2D) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Elementwise product of two masks of equal shape.
pub fn mask_and(a: &BitMask2D, b: &BitMask2D) -> Result<BitMask2D> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "mask_and of {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(BitMask2D {
        height: a.height,
        width: a.width,
        bits: a.bits.iter().zip(&b.bits).map(|(x, y)| x & y).collect(),
    })
}

/// `L × H × W` sequence of binary masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMaskSeq {
    masks: Vec<BitMask2D>,
}

impl BitMaskSeq {
    pub fn new(masks: Vec<BitMask2D>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::shape("mask sequence needs at least one mask"))?;
        if masks.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::shape("all masks in a sequence must share H x W"));
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn height(&self) -> usize {
        self.masks[0].height
    }

    pub fn width(&self) -> usize {
        self.masks[0].width
    }

    pub fn mask(&self, i: usize) -> &BitMask2D {
        &self.masks[i]
    }

    pub fn masks(&self) -> &[BitMask2D] {
        &self.masks
    }
}

/// `H × W` real-valued field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Per-pixel temporal mean of the Euclidean flow norm, `(1/L) Σ_i ‖f^i‖₂`.
pub fn flow_magnitude_mean(flow: &FlowField) -> ScalarField {
    let n = flow.height * flow.width;
    let mut values = vec![0.0; n];
    for i in 0..flow.len {
        let frame = flow.frame(i);
        for (v, d) in values.iter_mut().zip(frame.chunks_exact(2)) {
            *v += d[0].hypot(d[1]);
        }
    }
    let n_frames = flow.len as f64;
    values.iter_mut().for_each(|v| *v /= n_frames);
    ScalarField {
        height: flow.height,
        width: flow.width,
        values,
    }
}
