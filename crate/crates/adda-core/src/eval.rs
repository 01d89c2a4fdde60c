//! Linear classification on frozen features.
//!
//! Features are the backbone outputs (pre-projection) of the trained query
//! encoder over un-augmented images. The probe is multinomial logistic
//! regression trained with mini-batch gradient descent on a deterministic
//! 80/20 split.

use crate::data::Dataset;
use crate::encoder::{EncoderParams, forward};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix};
use crate::rng::RngStream;

/// Linear classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub w: Matrix,
    pub b: Vec<f32>,
}

/// Probe hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub epochs: u32,
    pub lr: f32,
    pub batch: usize,
    pub seed: u64,
    /// Fraction of the data held out for the accuracy report.
    pub holdout: f32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 50, lr: 0.1, batch: 64, seed: 7, holdout: 0.2 }
    }
}

/// Frozen backbone features and labels for every image, deterministic:
/// full frames, no augmentation.
pub fn extract_features(
    params: &EncoderParams,
    dataset: &Dataset,
) -> Result<(Matrix, Vec<u32>)> {
    let d_in = dataset.input_dim();
    if params.dims().d_in != d_in {
        return Err(Error::Config(format!(
            "encoder expects {} inputs, dataset provides {d_in}",
            params.dims().d_in
        )));
    }
    let mut batch = Matrix::zeros(dataset.len(), d_in);
    for i in 0..dataset.len() {
        batch.row_mut(i).copy_from_slice(&dataset.image(i).to_flat());
    }
    let (features, _, _) = forward(params, &batch)?;
    Ok((features, dataset.labels().to_vec()))
}

/// Probe outcome: the model, held-out top-1, and the training loss curve.
pub struct ProbeOutcome {
    pub model: ProbeModel,
    pub top1: f32,
    pub train_loss: Vec<f32>,
}

/// Trains a softmax linear classifier on the features and reports held-out
/// top-1 accuracy.
pub fn linear_probe(
    features: &Matrix,
    labels: &[u32],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::Domain("probe needs at least one epoch".into()));
    }
    let present: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::Domain("probe needs at least two classes present".into()));
    }
    if num_classes < present.iter().max().map(|&m| m as usize + 1).unwrap_or(0) {
        return Err(Error::Domain("label outside declared class count".into()));
    }

    let d = features.cols();
    let n = features.rows();
    let root = RngStream::root(cfg.seed).derive_label("probe");

    // deterministic 80/20 split
    let mut order: Vec<usize> = (0..n).collect();
    root.derive_label("split").shuffle(&mut order);
    let holdout = ((n as f32) * cfg.holdout).round() as usize;
    let holdout = holdout.clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(holdout);

    let mut model = ProbeModel { w: Matrix::zeros(d, num_classes), b: vec![0.0; num_classes] };
    let mut train_loss = Vec::with_capacity(cfg.epochs as usize);
    let batch = cfg.batch.max(1);

    for epoch in 0..cfg.epochs {
        let mut idx = train_idx.to_vec();
        root.derive_label("epoch").derive(u64::from(epoch)).shuffle(&mut idx);

        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in idx.chunks(batch) {
            let mut grad_w = Matrix::zeros(d, num_classes);
            let mut grad_b = vec![0.0f32; num_classes];
            let mut chunk_loss = 0.0f64;
            for &i in chunk {
                let x = features.row(i);
                let mut logits = model.b.clone();
                for (j, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (l, w) in logits.iter_mut().zip(model.w.row(j)) {
                        *l += xv * w;
                    }
                }
                let p = softmax(&logits, 1.0)?;
                let y = labels[i] as usize;
                chunk_loss += -f64::from(p[y].max(1e-30)).ln();
                for c in 0..num_classes {
                    let delta = p[c] - if c == y { 1.0 } else { 0.0 };
                    grad_b[c] += delta;
                    for (j, &xv) in x.iter().enumerate() {
                        grad_w.data_mut()[j * num_classes + c] += delta * xv;
                    }
                }
            }
            let scale = cfg.lr / chunk.len() as f32;
            for (w, &g) in model.w.data_mut().iter_mut().zip(grad_w.data()) {
                *w -= scale * g;
            }
            for (b, &g) in model.b.iter_mut().zip(&grad_b) {
                *b -= scale * g;
            }
            epoch_loss += chunk_loss;
            seen += chunk.len();
        }
        train_loss.push((epoch_loss / seen as f64) as f32);
    }

    let predictions: Vec<u32> = val_idx
        .iter()
        .map(|&i| predict(&model, features.row(i)))
        .collect();
    let truth: Vec<u32> = val_idx.iter().map(|&i| labels[i]).collect();
    let top1 = top1_accuracy(&predictions, &truth)?;
    Ok(ProbeOutcome { model, top1, train_loss })
}

/// Argmax class for one feature row; ties resolve to the lowest class.
pub fn predict(model: &ProbeModel, x: &[f32]) -> u32 {
    let mut logits = model.b.clone();
    for (j, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (l, w) in logits.iter_mut().zip(model.w.row(j)) {
            *l += xv * w;
        }
    }
    let mut best = 0usize;
    for (c, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = c;
        }
    }
    best as u32
}

/// Fraction of exact matches.
pub fn top1_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f32> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Domain("accuracy of an empty prediction list".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f32 / predictions.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two well-separated Gaussian-ish blobs, linearly separable.
    fn blobs(per_class: usize, dim: usize, seed: u64) -> (Matrix, Vec<u32>) {
        let mut rng = RngStream::root(seed).derive_label("blobs");
        let mut data = Vec::with_capacity(2 * per_class * dim);
        let mut labels = Vec::with_capacity(2 * per_class);
        for class in 0..2u32 {
            let center = if class == 0 { -1.0f32 } else { 1.0 };
            for _ in 0..per_class {
                for _ in 0..dim {
                    data.push(center + rng.uniform_in(-0.4, 0.4));
                }
                labels.push(class);
            }
        }
        (Matrix::from_vec(2 * per_class, dim, data).unwrap(), labels)
    }

    #[test]
    fn separable_blobs_probe_high() {
        let (features, labels) = blobs(100, 6, 3);
        let out = linear_probe(&features, &labels, 2, &ProbeConfig::default()).unwrap();
        assert!(out.top1 >= 0.95, "top1 = {}", out.top1);
    }

    #[test]
    fn random_labels_probe_at_chance() {
        let mut rng = RngStream::root(9).derive_label("chance");
        let n = 2000;
        let dim = 8;
        let data: Vec<f32> = (0..n * dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.below(4) as u32).collect();
        let features = Matrix::from_vec(n, dim, data).unwrap();
        let out = linear_probe(&features, &labels, 4, &ProbeConfig::default()).unwrap();
        assert!(
            (out.top1 - 0.25).abs() <= 0.05,
            "top1 = {} should be near chance",
            out.top1
        );
    }

    #[test]
    fn zero_lr_probe_equals_untrained_model() {
        let (features, labels) = blobs(50, 4, 5);
        let cfg = ProbeConfig { lr: 0.0, ..ProbeConfig::default() };
        let out = linear_probe(&features, &labels, 2, &cfg).unwrap();
        // untrained model predicts class 0 everywhere; accuracy equals the
        // fraction of class-0 samples in the holdout
        let zero = ProbeModel { w: Matrix::zeros(4, 2), b: vec![0.0; 2] };
        assert_eq!(out.model, zero);
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::root(cfg.seed)
            .derive_label("probe")
            .derive_label("split")
            .shuffle(&mut order);
        let holdout = ((n as f32) * cfg.holdout).round() as usize;
        let frac0 = order[..holdout].iter().filter(|&&i| labels[i] == 0).count() as f32
            / holdout as f32;
        assert!((out.top1 - frac0).abs() < 1e-6);
    }

    #[test]
    fn probe_training_loss_is_non_increasing() {
        let (features, labels) = blobs(80, 5, 11);
        let cfg = ProbeConfig { lr: 0.05, epochs: 30, ..ProbeConfig::default() };
        let out = linear_probe(&features, &labels, 2, &cfg).unwrap();
        for pair in out.train_loss.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-3,
                "loss went up: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let (features, _) = blobs(20, 3, 2);
        let labels = vec![0u32; features.rows()];
        assert!(linear_probe(&features, &labels, 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn zero_epochs_is_a_parameter_error() {
        let (features, labels) = blobs(20, 3, 2);
        let cfg = ProbeConfig { epochs: 0, ..ProbeConfig::default() };
        assert!(linear_probe(&features, &labels, 2, &cfg).is_err());
    }

    #[test]
    fn top1_examples() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn features_are_deterministic() {
        use crate::data::{generate_synthetic, GenParams};
        use crate::encoder::EncoderDims;
        let ds = generate_synthetic(
            GenParams { num_classes: 2, per_class: 5, height: 8, width: 8 },
            4,
        )
        .unwrap();
        let mut rng = RngStream::root(8).derive(0);
        let params = EncoderParams::init(
            EncoderDims { d_in: ds.input_dim(), d_h: 8, d_z: 4 },
            &mut rng,
        );
        let (a, _) = extract_features(&params, &ds).unwrap();
        let (b, _) = extract_features(&params, &ds).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cols(), 8);
        assert!(a.is_finite());
    }
}
