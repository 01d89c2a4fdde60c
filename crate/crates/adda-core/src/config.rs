//! Flat `key = value` run configuration.
//!
//! Unknown keys are hard errors so typos in frequency sweeps fail loudly.
//! Compositions live under `comp.<i>.<field>`; everything else is a scalar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::augment::{AugOpKind, AugOpSpec, Composition, CropParams};
use crate::error::{Error, Result};

/// How per-composition mean losses are combined into the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// Weight each composition's mean loss by its sampling probability.
    Probability,
    /// Plain mean over the compositions that received data.
    Uniform,
}

/// Which probabilities the loss weighting uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilitySource {
    /// The exact softmax probabilities.
    Softmax,
    /// The realized per-batch fractions after integerization.
    Realized,
}

/// One composition's operator frequencies and strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct CompConfig {
    pub ops: Vec<String>,
    pub crop_min: f32,
    pub crop_max: f32,
    pub jitter_freq: f32,
    pub jitter_strength: f32,
    pub grayscale_freq: f32,
    pub blur_freq: f32,
    pub blur_sigma_min: f32,
    pub blur_sigma_max: f32,
    pub flip_freq: f32,
}

impl Default for CompConfig {
    fn default() -> Self {
        CompConfig {
            ops: vec!["jitter".into(), "grayscale".into(), "blur".into(), "hflip".into()],
            crop_min: 0.2,
            crop_max: 1.0,
            jitter_freq: 0.8,
            jitter_strength: 0.4,
            grayscale_freq: 0.2,
            blur_freq: 0.5,
            blur_sigma_min: 0.1,
            blur_sigma_max: 2.0,
            flip_freq: 0.5,
        }
    }
}

impl CompConfig {
    /// Builds the runtime composition for a given output size.
    pub fn build(&self, id: usize, out_hw: (usize, usize)) -> Result<Composition> {
        let mut specs = Vec::with_capacity(self.ops.len());
        for name in &self.ops {
            let spec = match name.as_str() {
                "jitter" => AugOpSpec {
                    kind: AugOpKind::ColorJitter {
                        brightness: self.jitter_strength,
                        contrast: self.jitter_strength,
                        saturation: self.jitter_strength,
                    },
                    frequency: self.jitter_freq,
                },
                "grayscale" => {
                    AugOpSpec { kind: AugOpKind::Grayscale, frequency: self.grayscale_freq }
                }
                "blur" => AugOpSpec {
                    kind: AugOpKind::GaussianBlur {
                        sigma_min: self.blur_sigma_min,
                        sigma_max: self.blur_sigma_max,
                    },
                    frequency: self.blur_freq,
                },
                "hflip" => {
                    AugOpSpec { kind: AugOpKind::HorizontalFlip, frequency: self.flip_freq }
                }
                other => {
                    return Err(Error::Config(format!(
                        "comp.{id}.ops names unknown operator `{other}`"
                    )))
                }
            };
            specs.push(spec);
        }
        Composition::new(
            id,
            CropParams {
                scale_min: self.crop_min,
                scale_max: self.crop_max,
                out_h: out_hw.0,
                out_w: out_hw.1,
            },
            specs,
        )
    }
}

/// Full run configuration with the stock defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub tau: f32,
    pub momentum: f32,
    pub queue_capacity: usize,
    pub update_rate: f32,
    pub min_subbatch: usize,
    pub seed: u64,
    pub loss_weighting: LossWeighting,
    pub probability_source: ProbabilitySource,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub metrics_out: PathBuf,
    pub checkpoint_out: PathBuf,
    pub checkpoint_every: u32,
    pub probe_epochs: u32,
    pub probe_lr: f32,
    pub probe_batch: usize,
    pub ablation_out: PathBuf,
    pub comps: Vec<CompConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Three compositions sweeping the jitter frequency around the
        // stock value, other frequencies at their defaults.
        let comps = [0.6, 0.7, 0.8]
            .iter()
            .map(|&f| CompConfig { jitter_freq: f, ..CompConfig::default() })
            .collect();
        TrainConfig {
            dataset: None,
            epochs: 30,
            batch_size: 128,
            lr: 0.03,
            weight_decay: 1e-4,
            tau: 0.2,
            momentum: 0.99,
            queue_capacity: 1024,
            update_rate: 1.0,
            min_subbatch: 1,
            seed: 42,
            loss_weighting: LossWeighting::Probability,
            probability_source: ProbabilitySource::Softmax,
            hidden_dim: 64,
            embed_dim: 32,
            metrics_out: PathBuf::from("out/metrics.csv"),
            checkpoint_out: PathBuf::from("out/model.adck"),
            checkpoint_every: 0,
            probe_epochs: 50,
            probe_lr: 0.1,
            probe_batch: 64,
            ablation_out: PathBuf::from("out/ablation.csv"),
            comps,
        }
    }
}

impl TrainConfig {
    pub fn n_comps(&self) -> usize {
        self.comps.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut comp_overrides: BTreeMap<usize, Vec<(String, String)>> = BTreeMap::new();
        let mut n_comps: Option<usize> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();

            if let Some(rest) = key.strip_prefix("comp.") {
                let (idx, field) = rest.split_once('.').ok_or_else(|| {
                    Error::Config(format!("key `{key}` must look like comp.<i>.<field>"))
                })?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Config(format!("bad composition index in `{key}`")))?;
                comp_overrides
                    .entry(idx)
                    .or_default()
                    .push((field.to_string(), value.to_string()));
                continue;
            }

            match key {
                "dataset" => cfg.dataset = Some(PathBuf::from(value)),
                "epochs" => cfg.epochs = parse_num(key, value)?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "lr" => cfg.lr = parse_num(key, value)?,
                "weight_decay" => cfg.weight_decay = parse_num(key, value)?,
                "tau" => cfg.tau = parse_num(key, value)?,
                "momentum" => cfg.momentum = parse_num(key, value)?,
                "queue_capacity" => cfg.queue_capacity = parse_num(key, value)?,
                "ur" => cfg.update_rate = parse_num(key, value)?,
                "min_subbatch" => cfg.min_subbatch = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "loss_weighting" => {
                    cfg.loss_weighting = match value {
                        "probability" => LossWeighting::Probability,
                        "uniform" => LossWeighting::Uniform,
                        other => {
                            return Err(Error::Config(format!(
                                "loss_weighting must be `probability` or `uniform`, got `{other}`"
                            )))
                        }
                    }
                }
                "probability_source" => {
                    cfg.probability_source = match value {
                        "softmax" => ProbabilitySource::Softmax,
                        "realized" => ProbabilitySource::Realized,
                        other => {
                            return Err(Error::Config(format!(
                                "probability_source must be `softmax` or `realized`, got `{other}`"
                            )))
                        }
                    }
                }
                "hidden_dim" => cfg.hidden_dim = parse_num(key, value)?,
                "embed_dim" => cfg.embed_dim = parse_num(key, value)?,
                "metrics_out" => cfg.metrics_out = PathBuf::from(value),
                "checkpoint_out" => cfg.checkpoint_out = PathBuf::from(value),
                "checkpoint_every" => cfg.checkpoint_every = parse_num(key, value)?,
                "probe_epochs" => cfg.probe_epochs = parse_num(key, value)?,
                "probe_lr" => cfg.probe_lr = parse_num(key, value)?,
                "probe_batch" => cfg.probe_batch = parse_num(key, value)?,
                "ablation_out" => cfg.ablation_out = PathBuf::from(value),
                "n_comps" => n_comps = Some(parse_num(key, value)?),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }

        if let Some(n) = n_comps {
            if n == 0 {
                return Err(Error::Config("n_comps must be at least 1".into()));
            }
            cfg.comps = vec![CompConfig::default(); n];
        }
        for (idx, fields) in comp_overrides {
            if idx >= cfg.comps.len() {
                return Err(Error::Config(format!(
                    "comp.{idx} out of range: n_comps is {}",
                    cfg.comps.len()
                )));
            }
            for (field, value) in fields {
                apply_comp_field(&mut cfg.comps[idx], idx, &field, &value)?;
            }
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.comps.is_empty() {
            return Err(Error::Config("at least one composition is required".into()));
        }
        if self.batch_size < self.comps.len() * self.min_subbatch {
            return Err(Error::Config(format!(
                "batch_size {} cannot hold {} compositions at min_subbatch {}",
                self.batch_size,
                self.comps.len(),
                self.min_subbatch
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(self.update_rate > 0.0) {
            return Err(Error::Config(format!("ur {} must be positive", self.update_rate)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Config("queue_capacity must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        Ok(())
    }

    /// Builds all runtime compositions for images of the given size.
    pub fn compositions(&self, out_hw: (usize, usize)) -> Result<Vec<Composition>> {
        self.comps
            .iter()
            .enumerate()
            .map(|(i, c)| c.build(i, out_hw))
            .collect()
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn apply_comp_field(comp: &mut CompConfig, idx: usize, field: &str, value: &str) -> Result<()> {
    let key = format!("comp.{idx}.{field}");
    match field {
        "ops" => {
            let names: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
            if names.is_empty() || names.iter().any(String::is_empty) {
                return Err(Error::Config(format!("{key}: empty operator list")));
            }
            let known = crate::augment::ops::op_names();
            for name in &names {
                if !known.contains(&name.as_str()) {
                    return Err(Error::Config(format!(
                        "{key}: unknown operator `{name}` (known: {})",
                        known.join(", ")
                    )));
                }
            }
            comp.ops = names;
        }
        "crop_min" => comp.crop_min = parse_num(&key, value)?,
        "crop_max" => comp.crop_max = parse_num(&key, value)?,
        "jitter_freq" => comp.jitter_freq = parse_num(&key, value)?,
        "jitter_strength" => comp.jitter_strength = parse_num(&key, value)?,
        "grayscale_freq" => comp.grayscale_freq = parse_num(&key, value)?,
        "blur_freq" => comp.blur_freq = parse_num(&key, value)?,
        "blur_sigma_min" => comp.blur_sigma_min = parse_num(&key, value)?,
        "blur_sigma_max" => comp.blur_sigma_max = parse_num(&key, value)?,
        "flip_freq" => comp.flip_freq = parse_num(&key, value)?,
        other => {
            return Err(Error::Config(format!("unknown composition key `comp.{idx}.{other}`")))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = TrainConfig::parse("").unwrap();
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.tau, 0.2);
        assert_eq!(cfg.update_rate, 1.0);
        assert_eq!(cfg.n_comps(), 3);
        assert_eq!(cfg.comps[0].jitter_freq, 0.6);
        assert_eq!(cfg.comps[2].jitter_freq, 0.8);
        // stock operator frequencies
        let c = CompConfig::default();
        assert_eq!(
            (c.jitter_freq, c.grayscale_freq, c.blur_freq, c.flip_freq),
            (0.8, 0.2, 0.5, 0.5)
        );
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = TrainConfig::parse("jitter_frq = 0.5").unwrap_err();
        assert!(err.to_string().contains("jitter_frq"), "{err}");
        let err = TrainConfig::parse("comp.0.jitter_frq = 0.5").unwrap_err();
        assert!(err.to_string().contains("jitter_frq"), "{err}");
    }

    #[test]
    fn comp_overrides_apply() {
        let text = "n_comps = 2\ncomp.0.jitter_freq = 0.6\ncomp.1.jitter_freq = 1.0\ncomp.1.crop_min = 0.5\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.n_comps(), 2);
        assert_eq!(cfg.comps[0].jitter_freq, 0.6);
        assert_eq!(cfg.comps[1].jitter_freq, 1.0);
        assert_eq!(cfg.comps[1].crop_min, 0.5);
        assert_eq!(cfg.comps[1].grayscale_freq, 0.2);
    }

    #[test]
    fn comp_index_out_of_range_is_an_error() {
        let err = TrainConfig::parse("n_comps = 2\ncomp.5.jitter_freq = 0.5").unwrap_err();
        assert!(err.to_string().contains("comp.5"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\nepochs = 5  # trailing\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.epochs, 5);
    }

    #[test]
    fn infeasible_batch_is_rejected() {
        let err = TrainConfig::parse("batch_size = 2\nmin_subbatch = 1\n").unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn enum_values_parse() {
        let cfg =
            TrainConfig::parse("loss_weighting = uniform\nprobability_source = realized\n")
                .unwrap();
        assert_eq!(cfg.loss_weighting, LossWeighting::Uniform);
        assert_eq!(cfg.probability_source, ProbabilitySource::Realized);
        assert!(TrainConfig::parse("loss_weighting = other").is_err());
    }

    #[test]
    fn ops_selection_builds_in_order() {
        let text = "n_comps = 1\ncomp.0.ops = hflip, blur\nbatch_size = 8\n";
        let cfg = TrainConfig::parse(text).unwrap();
        let comps = cfg.compositions((16, 16)).unwrap();
        let names: Vec<&str> = comps[0].specs().iter().map(|s| s.kind.name()).collect();
        assert_eq!(names, vec!["hflip", "blur"]);
        let err = TrainConfig::parse("n_comps = 1\ncomp.0.ops = warp\n").unwrap_err();
        assert!(err.to_string().contains("warp"), "{err}");
    }
}
