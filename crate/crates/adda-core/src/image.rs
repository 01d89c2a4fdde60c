//! CHW float images with clamped writes.

use crate::error::{Error, Result};

/// 3-channel image, pixels in `[0, 1]`, channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Image {
            channels: Self::CHANNELS,
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); Self::CHANNELS * height * width],
        }
    }

    /// Builds from raw CHW pixels, clamping each value into `[0, 1]`.
    pub fn from_pixels(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} needs {} pixels, got {}",
                Self::CHANNELS * height * width,
                pixels.len()
            )));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(Image { channels: Self::CHANNELS, height, width, pixels })
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

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Clamped write; images never leave `[0, 1]`.
    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Per-pixel luminance with broadcast weights 0.299/0.587/0.114.
    pub fn luminance(&self, y: usize, x: usize) -> f32 {
        0.299 * self.get(0, y, x) + 0.587 * self.get(1, y, x) + 0.114 * self.get(2, y, x)
    }

    /// Scalar mean over all channels and positions.
    pub fn mean(&self) -> f32 {
        let sum: f32 = self.pixels.iter().sum();
        sum / self.pixels.len() as f32
    }

    /// Flattened CHW row for the encoder input.
    pub fn to_flat(&self) -> Vec<f32> {
        self.pixels.clone()
    }
}
