//! Dense pixel grids: multi-channel images, binary masks and face videos.
//!
//! All grids are row-major with interleaved channels (`[row][col][channel]`).

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::arg(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col, pixel_out)` per pixel, rows in parallel.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f32]) + Sync + Send,
    {
        let mut img = Self::new(width, height, channels);
        let stride = width * channels;
        par::for_each_row(&mut img.data, stride, |row, line| {
            for (col, px) in line.chunks_mut(channels.max(1)).enumerate() {
                f(row, col, px);
            }
        });
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let o = self.offset(row, col);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.offset(row, col) + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let o = self.offset(row, col) + ch;
        self.data[o] = value;
    }

    /// Bilinear sample at continuous coordinates where pixel `(r, c)` has its
    /// center at `(r, c)`. Rows always clamp; columns wrap when `wrap_cols` is
    /// set and clamp otherwise.
    pub fn sample_bilinear(&self, col: f64, row: f64, wrap_cols: bool, out: &mut [f32]) {
        let c0 = col.floor();
        let r0 = row.floor();
        let tc = (col - c0) as f32;
        let tr = (row - r0) as f32;
        let (c0, r0) = (c0 as i64, r0 as i64);
        let w = self.width as i64;
        let h = self.height as i64;
        let col_idx = |c: i64| -> usize {
            if wrap_cols {
                c.rem_euclid(w) as usize
            } else {
                c.clamp(0, w - 1) as usize
            }
        };
        let row_idx = |r: i64| -> usize { r.clamp(0, h - 1) as usize };
        let (ca, cb) = (col_idx(c0), col_idx(c0 + 1));
        let (ra, rb) = (row_idx(r0), row_idx(r0 + 1));
        let p00 = self.pixel(ra, ca);
        let p01 = self.pixel(ra, cb);
        let p10 = self.pixel(rb, ca);
        let p11 = self.pixel(rb, cb);
        for ch in 0..self.channels {
            let top = p00[ch] + (p01[ch] - p00[ch]) * tc;
            let bot = p10[ch] + (p11[ch] - p10[ch]) * tc;
            out[ch] = top + (bot - top) * tr;
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "image shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Binary grid with entries in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg("mask buffer size mismatch"));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::arg("mask entries must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Spatial mean, i.e. the fraction of set entries.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.data.len() as f64
    }
}

/// A square face clip: `frames` consecutive `size`×`size`×`channels` grids.
///
/// This is the working latent of the generator (pixels at generation
/// resolution; there is no separate autoencoder stage).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVideo {
    frames: usize,
    size: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FaceVideo {
    pub fn zeros(frames: usize, size: usize, channels: usize) -> Self {
        Self {
            frames,
            size,
            channels,
            data: vec![0.0; frames * size * size * channels],
        }
    }

    pub fn from_vec(frames: usize, size: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * size * size * channels {
            return Err(Error::arg("face video buffer size mismatch"));
        }
        Ok(Self {
            frames,
            size,
            channels,
            data,
        })
    }

    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::arg("face video needs at least one frame"))?;
        let (size, channels) = (first.width(), first.channels());
        let mut data = Vec::with_capacity(frames.len() * size * size * channels);
        for f in frames {
            if f.width() != size || f.height() != size || f.channels() != channels {
                return Err(Error::arg(
                    "face video frames must be square and share a shape",
                ));
            }
            data.extend_from_slice(f.data());
        }
        Ok(Self {
            frames: frames.len(),
            size,
            channels,
            data,
        })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.size, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.size * self.size * self.channels
    }

    pub fn frame(&self, t: usize) -> Image {
        let n = self.frame_len();
        Image::from_vec(
            self.size,
            self.size,
            self.channels,
            self.data[t * n..(t + 1) * n].to_vec(),
        )
        .expect("frame slice has image shape")
    }

    pub fn set_frame(&mut self, t: usize, img: &Image) {
        let n = self.frame_len();
        self.data[t * n..(t + 1) * n].copy_from_slice(img.data());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &FaceVideo) -> f32 {
        assert_eq!(self.shape(), other.shape(), "face video shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
