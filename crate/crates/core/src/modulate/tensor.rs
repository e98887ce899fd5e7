use crate::error::{Error, Result};

/// Dense `L × h × w × c` feature volume, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    len: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(len: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            len,
            height,
            width,
            channels,
            data: vec![0.0; len * height * width * channels],
        }
    }

    pub fn from_vec(len: usize, height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {len}x{height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor values must be finite"));
        }
        Ok(Self {
            len,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        len: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(len, height, width, channels);
        for i in 0..len {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        let j = t.index(i, y, x, c);
                        t.data[j] = f(i, y, x, c);
                    }
                }
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn dims(&self) -> [usize; 4] {
        [self.len, self.height, self.width, self.channels]
    }

    pub fn positions(&self) -> usize {
        self.len * self.height * self.width
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

    #[inline]
    pub fn index(&self, i: usize, y: usize, x: usize, c: usize) -> usize {
        ((i * self.height + y) * self.width + x) * self.channels + c
    }

    pub fn get(&self, i: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(i, y, x, c)]
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn expect_dims(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            len: self.len,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_dims(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub(crate) fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            len: self.len,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Channel concatenation.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let [l, h, w, _] = first.dims();
        if parts.iter().any(|p| p.len != l || p.height != h || p.width != w) {
            return Err(Error::shape("concat: spatial-temporal dims differ"));
        }
        let c: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(l * h * w * c);
        for pos in 0..l * h * w {
            for p in parts {
                data.extend_from_slice(&p.data[pos * p.channels..(pos + 1) * p.channels]);
            }
        }
        Ok(Tensor {
            len: l,
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    /// Split channels at `at` into `[0, at)` and `[at, c)`.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        let c = self.channels;
        let mut a = Tensor::zeros(self.len, self.height, self.width, at);
        let mut b = Tensor::zeros(self.len, self.height, self.width, c - at);
        for pos in 0..self.positions() {
            let src = &self.data[pos * c..(pos + 1) * c];
            a.data[pos * at..(pos + 1) * at].copy_from_slice(&src[..at]);
            b.data[pos * (c - at)..(pos + 1) * (c - at)].copy_from_slice(&src[at..]);
        }
        (a, b)
    }

    /// Repeat a single-frame tensor `len` times along time.
    pub fn repeat_frames(&self, len: usize) -> Result<Tensor> {
        if self.len != 1 {
            return Err(Error::shape("repeat_frames expects a single frame"));
        }
        Ok(Tensor {
            len,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.repeat(len),
        })
    }

    /// Frame `i` as a single-frame tensor.
    pub fn frame(&self, i: usize) -> Tensor {
        let n = self.height * self.width * self.channels;
        Tensor {
            len: 1,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
