//! The augmentation operators, each behind the [`ImageOp`] trait.
//!
//! Operators are looked up by name in [`REGISTRY`] and built from an
//! [`AugOpSpec`], so configs pick which operators run and in what order.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

use super::AugOpSpec;

/// One stochastic image operator. Implementations draw their parameters
/// from the stream they are given and must map `[0,1]` pixels to `[0,1]`.
pub trait ImageOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, img: &Image, rng: &mut RngStream) -> Image;
}

/// Multiplicative brightness, contrast about the per-image mean, and
/// saturation toward per-pixel luminance, in that fixed order. Each factor
/// is drawn uniformly from `[1 - strength, 1 + strength]`.
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl ColorJitter {
    pub fn with_brightness(img: &Image, factor: f32) -> Image {
        let mut out = img.clone();
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    out.set(c, y, x, img.get(c, y, x) * factor);
                }
            }
        }
        out
    }

    pub fn with_contrast(img: &Image, factor: f32) -> Image {
        let mean = img.mean();
        let mut out = img.clone();
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    out.set(c, y, x, mean + factor * (img.get(c, y, x) - mean));
                }
            }
        }
        out
    }

    pub fn with_saturation(img: &Image, factor: f32) -> Image {
        let mut out = img.clone();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let lum = img.luminance(y, x);
                for c in 0..img.channels() {
                    out.set(c, y, x, lum + factor * (img.get(c, y, x) - lum));
                }
            }
        }
        out
    }
}

impl ImageOp for ColorJitter {
    fn name(&self) -> &'static str {
        "jitter"
    }

    fn apply(&self, img: &Image, rng: &mut RngStream) -> Image {
        let fb = rng.uniform_in((1.0 - self.brightness).max(0.0), 1.0 + self.brightness);
        let fc = rng.uniform_in((1.0 - self.contrast).max(0.0), 1.0 + self.contrast);
        let fs = rng.uniform_in((1.0 - self.saturation).max(0.0), 1.0 + self.saturation);
        let out = Self::with_brightness(img, fb);
        let out = Self::with_contrast(&out, fc);
        Self::with_saturation(&out, fs)
    }
}

/// Replaces every channel with the pixel luminance.
pub struct Grayscale;

impl Grayscale {
    pub fn convert(img: &Image) -> Image {
        let mut out = img.clone();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let lum = img.luminance(y, x);
                for c in 0..img.channels() {
                    out.set(c, y, x, lum);
                }
            }
        }
        out
    }
}

impl ImageOp for Grayscale {
    fn name(&self) -> &'static str {
        "grayscale"
    }

    fn apply(&self, img: &Image, _rng: &mut RngStream) -> Image {
        Self::convert(img)
    }
}

/// Separable Gaussian convolution with sigma drawn from a range. Kernel
/// radius is `ceil(3 sigma)`; edges are handled by clamping coordinates.
pub struct GaussianBlur {
    pub sigma_min: f32,
    pub sigma_max: f32,
}

impl GaussianBlur {
    pub fn with_sigma(img: &Image, sigma: f32) -> Image {
        debug_assert!(sigma > 0.0);
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            kernel.push((-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp());
        }
        let sum: f32 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= sum;
        }

        let (h, w) = (img.height() as i64, img.width() as i64);
        // Horizontal pass into a raw buffer (values stay in [0,1] since the
        // kernel is a convex combination), then vertical pass.
        let mut tmp = img.clone();
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..w {
                    let mut acc = 0.0f32;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                        acc += kv * img.get(c, y, sx as usize);
                    }
                    tmp.set(c, y, x as usize, acc);
                }
            }
        }
        let mut out = tmp.clone();
        for c in 0..img.channels() {
            for y in 0..h {
                for x in 0..img.width() {
                    let mut acc = 0.0f32;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                        acc += kv * tmp.get(c, sy as usize, x);
                    }
                    out.set(c, y as usize, x, acc);
                }
            }
        }
        out
    }
}

impl ImageOp for GaussianBlur {
    fn name(&self) -> &'static str {
        "blur"
    }

    fn apply(&self, img: &Image, rng: &mut RngStream) -> Image {
        let sigma = rng.uniform_in(self.sigma_min, self.sigma_max);
        Self::with_sigma(img, sigma)
    }
}

/// Mirrors the image left-to-right.
pub struct HorizontalFlip;

impl HorizontalFlip {
    pub fn flip(img: &Image) -> Image {
        let mut out = img.clone();
        let w = img.width();
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..w {
                    out.set(c, y, x, img.get(c, y, w - 1 - x));
                }
            }
        }
        out
    }
}

impl ImageOp for HorizontalFlip {
    fn name(&self) -> &'static str {
        "hflip"
    }

    fn apply(&self, img: &Image, _rng: &mut RngStream) -> Image {
        Self::flip(img)
    }
}

/// Operator registry: canonical name plus a builder from the op spec.
pub const REGISTRY: &[(&str, fn(&AugOpSpec) -> Box<dyn ImageOp>)] = &[
    ("jitter", |spec| match spec.kind {
        super::AugOpKind::ColorJitter { brightness, contrast, saturation } => {
            Box::new(ColorJitter { brightness, contrast, saturation })
        }
        _ => unreachable!("registry entry bound to a different kind"),
    }),
    ("grayscale", |_| Box::new(Grayscale)),
    ("blur", |spec| match spec.kind {
        super::AugOpKind::GaussianBlur { sigma_min, sigma_max } => {
            Box::new(GaussianBlur { sigma_min, sigma_max })
        }
        _ => unreachable!("registry entry bound to a different kind"),
    }),
    ("hflip", |_| Box::new(HorizontalFlip)),
];

/// Names of all registered operators, in their default application order.
pub fn op_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(name, _)| *name).collect()
}

/// Builds the trait object for a spec by registry lookup.
pub fn build_op(spec: &AugOpSpec) -> Result<Box<dyn ImageOp>> {
    let name = spec.kind.name();
    for (reg_name, builder) in REGISTRY {
        if *reg_name == name {
            return Ok(builder(spec));
        }
    }
    Err(Error::Config(format!("unknown augmentation operator `{name}`")))
}
