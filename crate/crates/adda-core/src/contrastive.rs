//! Instance-discrimination loss against a FIFO queue of key embeddings.
//!
//! The loss for one sample is softmax cross-entropy over one positive
//! similarity and the queued negatives, scaled by a temperature. Sums are
//! evaluated in f64 through a stabilized log-sum-exp so the result agrees
//! with a direct 64-bit evaluation to well under 1e-6.

use crate::error::{Error, Result};
use crate::numerics::{dot64, l2_norm, Matrix};

/// Fixed-capacity FIFO ring of unit-norm key embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Queue {
    capacity: usize,
    dim: usize,
    entries: Vec<f32>,
    head: usize,
    filled: usize,
}

impl Queue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity > 0 && dim > 0, "queue needs positive capacity and dim");
        Queue { capacity, dim, entries: vec![0.0; capacity * dim], head: 0, filled: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.capacity
    }

    /// Appends every row of `keys` in batch order, evicting the oldest
    /// entries once capacity is reached.
    pub fn enqueue(&mut self, keys: &Matrix) -> Result<()> {
        if keys.cols() != self.dim {
            return Err(Error::Shape(format!(
                "enqueue of {}-dim keys into {}-dim queue",
                keys.cols(),
                self.dim
            )));
        }
        for r in 0..keys.rows() {
            debug_assert!((l2_norm(keys.row(r)) - 1.0).abs() < 1e-4);
            let slot = self.head;
            self.entries[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(keys.row(r));
            self.head = (self.head + 1) % self.capacity;
            if self.filled < self.capacity {
                self.filled += 1;
            }
        }
        Ok(())
    }

    /// Entries oldest-first.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &[f32]> {
        let start = if self.filled == self.capacity { self.head } else { 0 };
        (0..self.filled).map(move |i| {
            let slot = (start + i) % self.capacity;
            &self.entries[slot * self.dim..(slot + 1) * self.dim]
        })
    }

    /// Snapshot oldest-first, for serialization.
    pub fn to_rows(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.filled * self.dim);
        for row in self.iter_fifo() {
            data.extend_from_slice(row);
        }
        Matrix::from_vec(self.filled, self.dim, data).expect("sized by construction")
    }

    /// Rebuilds a queue from an oldest-first snapshot.
    pub fn from_rows(capacity: usize, rows: &Matrix) -> Result<Self> {
        if rows.rows() > capacity {
            return Err(Error::Shape(format!(
                "{} queue rows exceed capacity {capacity}",
                rows.rows()
            )));
        }
        let mut q = Queue::new(capacity, rows.cols());
        q.enqueue(rows)?;
        Ok(q)
    }
}

/// Loss, raw logits, pretext correctness, and input gradients for one sample.
#[derive(Debug, Clone)]
pub struct ContrastiveOutcome {
    /// Non-negative loss; exactly zero when the queue is empty.
    pub loss: f32,
    /// `logits[0]` is the positive similarity over tau, then the queue
    /// entries oldest-first.
    pub logits: Vec<f32>,
    /// Positive logit is the strict maximum; ties count as incorrect.
    pub correct: bool,
    /// d loss / d z (query side).
    pub grad_z: Vec<f32>,
    /// d loss / d z_pos (key side; discarded by training, kept for checks).
    pub grad_pos: Vec<f32>,
}

/// Softmax cross-entropy of the positive pair against the queued negatives.
pub fn infonce(z: &[f32], z_pos: &[f32], queue: &Queue, tau: f32) -> Result<ContrastiveOutcome> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau} must be positive")));
    }
    if z.len() != z_pos.len() || (!queue.is_empty() && queue.dim() != z.len()) {
        return Err(Error::Shape(format!(
            "embedding dims mismatch: z {} z_pos {} queue {}",
            z.len(),
            z_pos.len(),
            queue.dim()
        )));
    }
    let tau64 = f64::from(tau);

    let mut logits64 = Vec::with_capacity(1 + queue.len());
    logits64.push(dot64(z, z_pos) / tau64);
    for k in queue.iter_fifo() {
        logits64.push(dot64(z, k) / tau64);
    }

    let max = logits64.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits64.iter().map(|&s| (s - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits64[0];

    let probs: Vec<f64> = logits64.iter().map(|&s| (s - lse).exp()).collect();
    let correct = if queue.is_empty() {
        true
    } else {
        let best_neg = logits64[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logits64[0] > best_neg
    };

    // d loss / d z = sum_j (p_j - [j = 0]) * direction_j / tau
    let mut grad_z = vec![0.0f64; z.len()];
    let coeff0 = probs[0] - 1.0;
    for (g, &v) in grad_z.iter_mut().zip(z_pos) {
        *g += coeff0 * f64::from(v);
    }
    for (j, k) in queue.iter_fifo().enumerate() {
        let c = probs[j + 1];
        for (g, &v) in grad_z.iter_mut().zip(k) {
            *g += c * f64::from(v);
        }
    }
    let grad_z: Vec<f32> = grad_z.iter().map(|&g| (g / tau64) as f32).collect();
    let grad_pos: Vec<f32> = z.iter().map(|&v| (coeff0 * f64::from(v) / tau64) as f32).collect();

    Ok(ContrastiveOutcome {
        loss: loss as f32,
        logits: logits64.iter().map(|&s| s as f32).collect(),
        correct,
        grad_z,
        grad_pos,
    })
}

/// Fraction of outcomes whose positive won the pretext task.
pub fn pretext_accuracy(outcomes: &[ContrastiveOutcome]) -> Result<f32> {
    if outcomes.is_empty() {
        return Err(Error::Domain("pretext accuracy of an empty outcome list".into()));
    }
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(correct as f32 / outcomes.len() as f32)
}

/// Total loss: per-composition mean losses weighted by the sampling
/// probabilities.
pub fn weighted_epoch_loss(losses: &[f32], p: &[f32]) -> Result<f32> {
    if losses.len() != p.len() {
        return Err(Error::Shape(format!(
            "{} losses vs {} probabilities",
            losses.len(),
            p.len()
        )));
    }
    let sum_p: f32 = p.iter().sum();
    if (sum_p - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("probabilities sum to {sum_p}, expected 1")));
    }
    Ok(losses.iter().zip(p).map(|(&l, &w)| l * w).sum())
}
