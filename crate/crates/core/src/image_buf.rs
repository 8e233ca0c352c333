//! Planar-interleaved float images and their 8-bit PNG encoding.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Result, SvlfError};

/// Row-major, channel-interleaved `f32` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(SvlfError::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let s = (y * self.width + x) * self.channels;
        &self.data[s..s + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let s = (y * self.width + x) * self.channels;
        &mut self.data[s..s + self.channels]
    }

    /// One channel as its own single-channel image.
    pub fn channel(&self, c: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Writes an 8-bit PNG (1 or 3 channels); values are clamped to `[0, 1]`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).map(|img| img.save(path)),
            3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).map(|img| img.save(path)),
            c => {
                return Err(SvlfError::InvalidArgument(format!(
                    "cannot write a {c}-channel PNG"
                )))
            }
        };
        res.expect("buffer length matches dimensions")
            .map_err(|source| SvlfError::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Reads a PNG as RGB (`channels == 3`) or luminance (`channels == 1`) in `[0, 1]`.
    pub fn read_png(path: &Path, channels: usize) -> Result<Self> {
        let img = image::open(path).map_err(|source| SvlfError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = match channels {
            1 => img.to_luma8().into_raw(),
            3 => img.to_rgb8().into_raw(),
            c => {
                return Err(SvlfError::InvalidArgument(format!(
                    "cannot read a {c}-channel PNG"
                )))
            }
        };
        Self::from_data(w, h, channels, raw.into_iter().map(|b| b as f32 / 255.0).collect())
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
