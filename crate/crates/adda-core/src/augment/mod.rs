//! Stochastic augmentation compositions.
//!
//! A composition is a random crop (always applied) followed by an ordered
//! list of operators, each gated by an applied frequency. Two views of the
//! same image come from two independent draws of the same composition.

pub mod ops;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

use ops::ImageOp;

/// Operator kind with its strength parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOpKind {
    ColorJitter { brightness: f32, contrast: f32, saturation: f32 },
    Grayscale,
    GaussianBlur { sigma_min: f32, sigma_max: f32 },
    HorizontalFlip,
}

impl AugOpKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugOpKind::ColorJitter { .. } => "jitter",
            AugOpKind::Grayscale => "grayscale",
            AugOpKind::GaussianBlur { .. } => "blur",
            AugOpKind::HorizontalFlip => "hflip",
        }
    }
}

/// One operator slot in a composition: the kind plus its applied frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugOpSpec {
    pub kind: AugOpKind,
    pub frequency: f32,
}

impl AugOpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.frequency) {
            return Err(Error::Domain(format!(
                "frequency {} for `{}` outside [0, 1]",
                self.frequency,
                self.kind.name()
            )));
        }
        match self.kind {
            AugOpKind::ColorJitter { brightness, contrast, saturation } => {
                if brightness < 0.0 || contrast < 0.0 || saturation < 0.0 {
                    return Err(Error::Domain("jitter strengths must be >= 0".into()));
                }
            }
            AugOpKind::GaussianBlur { sigma_min, sigma_max } => {
                if !(sigma_min > 0.0) || sigma_max < sigma_min {
                    return Err(Error::Domain(format!(
                        "blur sigma range ({sigma_min}, {sigma_max}) must be positive and ordered"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Crop parameters: sampled area fraction range and output size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    pub scale_min: f32,
    pub scale_max: f32,
    pub out_h: usize,
    pub out_w: usize,
}

/// An augmentation composition: crop plus gated operators in fixed order.
pub struct Composition {
    id: usize,
    crop: CropParams,
    specs: Vec<AugOpSpec>,
    built: Vec<Box<dyn ImageOp>>,
}

impl Composition {
    pub fn new(id: usize, crop: CropParams, specs: Vec<AugOpSpec>) -> Result<Self> {
        if !(crop.scale_min > 0.0) || crop.scale_max > 1.0 || crop.scale_max < crop.scale_min {
            return Err(Error::Domain(format!(
                "crop scale range ({}, {}) must lie in (0, 1] and be ordered",
                crop.scale_min, crop.scale_max
            )));
        }
        if crop.out_h < 2 || crop.out_w < 2 {
            return Err(Error::Domain("crop output must be at least 2x2".into()));
        }
        let mut built = Vec::with_capacity(specs.len());
        for spec in &specs {
            spec.validate()?;
            built.push(ops::build_op(spec)?);
        }
        Ok(Composition { id, crop, specs, built })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn crop(&self) -> CropParams {
        self.crop
    }

    pub fn specs(&self) -> &[AugOpSpec] {
        &self.specs
    }

    /// One stochastic view: crop first, then each operator fires iff an
    /// independent uniform draw lands below its frequency.
    pub fn apply(&self, img: &Image, rng: &mut RngStream) -> Result<Image> {
        let mut out = random_crop_resize(
            img,
            (self.crop.out_h, self.crop.out_w),
            (self.crop.scale_min, self.crop.scale_max),
            rng,
        )?;
        for (spec, op) in self.specs.iter().zip(&self.built) {
            if rng.next_f32() < spec.frequency {
                out = op.apply(&out, rng);
            }
        }
        Ok(out)
    }

    /// Two independent views of the same image from this composition,
    /// drawn on separate child streams.
    pub fn two_views(&self, img: &Image, rng: &RngStream) -> Result<(Image, Image)> {
        let mut first = rng.derive(0);
        let mut second = rng.derive(1);
        Ok((self.apply(img, &mut first)?, self.apply(img, &mut second)?))
    }
}

/// Crops a window with uniformly sampled area fraction and position, then
/// resizes to `out_hw` with bilinear interpolation (half-pixel centers).
pub fn random_crop_resize(
    img: &Image,
    out_hw: (usize, usize),
    scale_range: (f32, f32),
    rng: &mut RngStream,
) -> Result<Image> {
    let (out_h, out_w) = out_hw;
    let (smin, smax) = scale_range;
    if !(smin > 0.0) || smax > 1.0 || smax < smin {
        return Err(Error::Domain(format!(
            "crop scale range ({smin}, {smax}) must lie in (0, 1] and be ordered"
        )));
    }
    if out_h < 2 || out_w < 2 {
        return Err(Error::Domain("crop output must be at least 2x2".into()));
    }

    let area = rng.uniform_in(smin, smax);
    let side = f64::from(area).sqrt();
    let crop_h = (side * img.height() as f64).round() as usize;
    let crop_w = (side * img.width() as f64).round() as usize;
    if crop_h < 1 || crop_w < 1 {
        return Err(Error::Domain(format!(
            "crop window {crop_h}x{crop_w} smaller than one pixel"
        )));
    }
    let crop_h = crop_h.min(img.height());
    let crop_w = crop_w.min(img.width());
    let y0 = rng.below(img.height() - crop_h + 1);
    let x0 = rng.below(img.width() - crop_w + 1);

    let mut pixels = vec![0.0f32; Image::CHANNELS * out_h * out_w];
    let sy_scale = crop_h as f32 / out_h as f32;
    let sx_scale = crop_w as f32 / out_w as f32;
    for c in 0..Image::CHANNELS {
        for oy in 0..out_h {
            let sy = ((oy as f32 + 0.5) * sy_scale - 0.5).clamp(0.0, (crop_h - 1) as f32);
            let y_lo = sy.floor() as usize;
            let y_hi = (y_lo + 1).min(crop_h - 1);
            let wy = sy - y_lo as f32;
            for ox in 0..out_w {
                let sx = ((ox as f32 + 0.5) * sx_scale - 0.5).clamp(0.0, (crop_w - 1) as f32);
                let x_lo = sx.floor() as usize;
                let x_hi = (x_lo + 1).min(crop_w - 1);
                let wx = sx - x_lo as f32;
                let tl = img.get(c, y0 + y_lo, x0 + x_lo);
                let tr = img.get(c, y0 + y_lo, x0 + x_hi);
                let bl = img.get(c, y0 + y_hi, x0 + x_lo);
                let br = img.get(c, y0 + y_hi, x0 + x_hi);
                let top = tl + wx * (tr - tl);
                let bot = bl + wx * (br - bl);
                pixels[(c * out_h + oy) * out_w + ox] = top + wy * (bot - top);
            }
        }
    }
    Image::from_pixels(out_h, out_w, pixels)
}
