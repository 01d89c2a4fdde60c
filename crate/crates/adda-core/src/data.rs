//! Synthetic labeled images and the binary dataset format.
//!
//! Each class gets its own stripe orientation, spatial frequency, and color
//! palette; per-sample phase and noise keep instances distinct. The texture
//! is global, so crops and color jitter leave class identity recoverable.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::augment::Composition;
use crate::config::CompConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

/// Labeled image collection with a uniform shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<u32>,
    num_classes: u32,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images for {} labels",
                images.len(),
                labels.len()
            )));
        }
        let (h, w) = (images[0].height(), images[0].width());
        if images.iter().any(|img| img.height() != h || img.width() != w) {
            return Err(Error::Shape("images must share one shape".into()));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::Domain(format!("label out of range for {num_classes} classes")));
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.images[0].height(), self.images[0].width())
    }

    /// Flattened input dimension for the encoder.
    pub fn input_dim(&self) -> usize {
        Image::CHANNELS * self.images[0].height() * self.images[0].width()
    }
}

/// Generation parameters for the synthetic set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { num_classes: 4, per_class: 500, height: 16, width: 16 }
    }
}

const ANGLES_DEG: [f32; 8] = [0.0, 90.0, 45.0, 135.0, 20.0, 110.0, 65.0, 155.0];
const FREQS: [f32; 8] = [2.0, 3.0, 4.0, 5.0, 2.5, 3.5, 4.5, 5.5];
const PALETTES: [([f32; 3], [f32; 3]); 8] = [
    ([0.95, 0.20, 0.15], [0.25, 0.05, 0.45]),
    ([0.10, 0.85, 0.30], [0.05, 0.25, 0.10]),
    ([0.15, 0.35, 0.95], [0.70, 0.75, 0.30]),
    ([0.90, 0.80, 0.10], [0.35, 0.10, 0.60]),
    ([0.85, 0.45, 0.10], [0.10, 0.60, 0.65]),
    ([0.55, 0.10, 0.80], [0.90, 0.90, 0.85]),
    ([0.20, 0.65, 0.55], [0.75, 0.15, 0.35]),
    ([0.60, 0.60, 0.90], [0.15, 0.15, 0.05]),
];

fn synth_image(class: usize, height: usize, width: usize, rng: &mut RngStream) -> Image {
    let angle = ANGLES_DEG[class % 8].to_radians();
    let freq = FREQS[class % 8];
    let (a, b) = PALETTES[class % 8];
    let phase = rng.uniform_in(0.0, std::f32::consts::TAU);
    let span = height.max(width) as f32;
    let (cos_t, sin_t) = (angle.cos(), angle.sin());

    let mut pixels = vec![0.0f32; Image::CHANNELS * height * width];
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 * cos_t + y as f32 * sin_t) / span;
            let t = 0.5 + 0.5 * (std::f32::consts::TAU * freq * u + phase).sin();
            for c in 0..Image::CHANNELS {
                let noise = rng.uniform_in(-0.04, 0.04);
                pixels[(c * height + y) * width + x] = a[c] + t * (b[c] - a[c]) + noise;
            }
        }
    }
    Image::from_pixels(height, width, pixels).expect("sized by construction")
}

/// Class-conditional striped images, fully determined by `(params, seed)`.
pub fn generate_synthetic(params: GenParams, seed: u64) -> Result<Dataset> {
    if params.num_classes < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 classes, got {}",
            params.num_classes
        )));
    }
    if params.per_class == 0 || params.height < 2 || params.width < 2 {
        return Err(Error::Domain("per_class and image dims must be positive".into()));
    }
    let root = RngStream::root(seed).derive_label("dataset");
    let mut images = Vec::with_capacity(params.num_classes * params.per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for class in 0..params.num_classes {
        for s in 0..params.per_class {
            let mut rng = root.derive((class * params.per_class + s) as u64);
            images.push(synth_image(class, params.height, params.width, &mut rng));
            labels.push(class as u32);
        }
    }
    Dataset::new(images, labels, params.num_classes as u32)
}

/// Composition settings for the closed-loop testbed: index 0 is a no-op
/// (full-frame crop, every frequency zero, so the two views are identical
/// and the pretext task is trivially easy), index 1 is moderate, index 2
/// is aggressive enough to stay hard for a long time.
pub fn easy_scenario_comps() -> Vec<CompConfig> {
    let passthrough = CompConfig {
        crop_min: 1.0,
        crop_max: 1.0,
        jitter_freq: 0.0,
        grayscale_freq: 0.0,
        blur_freq: 0.0,
        flip_freq: 0.0,
        ..CompConfig::default()
    };
    let moderate = CompConfig {
        crop_min: 0.6,
        crop_max: 1.0,
        jitter_freq: 0.5,
        jitter_strength: 0.2,
        grayscale_freq: 0.1,
        blur_freq: 0.3,
        blur_sigma_min: 0.1,
        blur_sigma_max: 0.8,
        flip_freq: 0.5,
        ..CompConfig::default()
    };
    let aggressive = CompConfig {
        crop_min: 0.08,
        crop_max: 0.35,
        jitter_freq: 1.0,
        jitter_strength: 0.8,
        grayscale_freq: 0.5,
        blur_freq: 1.0,
        blur_sigma_min: 1.0,
        blur_sigma_max: 3.0,
        flip_freq: 0.5,
        ..CompConfig::default()
    };
    vec![passthrough, moderate, aggressive]
}

/// The closed-loop testbed: a synthetic dataset plus the three
/// [`easy_scenario_comps`] compositions built for its image size.
pub fn easy_scenario(params: GenParams, seed: u64) -> Result<(Dataset, Vec<Composition>)> {
    let dataset = generate_synthetic(params, seed)?;
    let out_hw = (params.height, params.width);
    let comps = easy_scenario_comps()
        .iter()
        .enumerate()
        .map(|(i, c)| c.build(i, out_hw))
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset, comps))
}

const MAGIC: &[u8; 4] = b"ADDS";
const VERSION: u32 = 1;

/// Writes the binary dataset format:
/// magic `ADDS`, u32 version, u32 count, u32 C, u32 H, u32 W,
/// u32 num_classes, then per record a u32 label and C*H*W little-endian f32.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.len() as u32).to_le_bytes())?;
    let (h, wd) = ds.shape();
    w.write_all(&(Image::CHANNELS as u32).to_le_bytes())?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wd as u32).to_le_bytes())?;
    w.write_all(&ds.num_classes().to_le_bytes())?;
    for i in 0..ds.len() {
        w.write_all(&ds.label(i).to_le_bytes())?;
        for &p in ds.image(i).pixels() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
}

/// Reads a dataset written by [`save_dataset`], bit-exact round trip.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut r = Cursor { inner: BufReader::new(file), offset: 0 };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected ADDS".into() });
    }
    let version = r.read_u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.read_u32("count")? as usize;
    let channels = r.read_u32("channels")? as usize;
    let height = r.read_u32("height")? as usize;
    let width = r.read_u32("width")? as usize;
    let num_classes = r.read_u32("num_classes")?;
    if channels != Image::CHANNELS {
        return Err(Error::Format {
            offset: 12,
            message: format!("expected {} channels, got {channels}", Image::CHANNELS),
        });
    }
    if count == 0 {
        return Err(Error::Format { offset: 8, message: "dataset holds no images".into() });
    }

    let per_image = channels * height * width;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        labels.push(r.read_u32(&format!("label of record {i}"))?);
        let mut pixels = Vec::with_capacity(per_image);
        for _ in 0..per_image {
            pixels.push(r.read_f32(&format!("pixels of record {i}"))?);
        }
        images.push(Image::from_pixels(height, width, pixels)?);
    }
    Dataset::new(images, labels, num_classes)
}
