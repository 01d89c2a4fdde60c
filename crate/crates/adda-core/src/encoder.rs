//! Query/key encoder pair: a two-layer ReLU backbone with a linear
//! projection head, row-normalized embeddings, exact reverse-mode
//! gradients, SGD, and the momentum twin update.

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, Matrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub d_in: usize,
    pub d_h: usize,
    pub d_z: usize,
}

/// Trainable parameters: backbone (w1, b1, w2, b2) and projection (wp, bp).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub b1: Vec<f32>,
    pub w2: Matrix,
    pub b2: Vec<f32>,
    pub wp: Matrix,
    pub bp: Vec<f32>,
}

impl EncoderParams {
    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
    pub fn init(dims: EncoderDims, rng: &mut RngStream) -> Self {
        let fill = |rows: usize, cols: usize, rng: &mut RngStream| {
            let bound = 1.0 / (rows as f32).sqrt();
            let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
            Matrix::from_vec(rows, cols, data).expect("sized by construction")
        };
        EncoderParams {
            w1: fill(dims.d_in, dims.d_h, rng),
            b1: vec![0.0; dims.d_h],
            w2: fill(dims.d_h, dims.d_h, rng),
            b2: vec![0.0; dims.d_h],
            wp: fill(dims.d_h, dims.d_z, rng),
            bp: vec![0.0; dims.d_z],
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        EncoderParams {
            w1: Matrix::zeros(dims.d_in, dims.d_h),
            b1: vec![0.0; dims.d_h],
            w2: Matrix::zeros(dims.d_h, dims.d_h),
            b2: vec![0.0; dims.d_h],
            wp: Matrix::zeros(dims.d_h, dims.d_z),
            bp: vec![0.0; dims.d_z],
        }
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims { d_in: self.w1.rows(), d_h: self.w1.cols(), d_z: self.wp.cols() }
    }

    /// Named tensors in a fixed order, for serialization.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f32])> {
        vec![
            ("w1", vec![self.w1.rows(), self.w1.cols()], self.w1.data()),
            ("b1", vec![self.b1.len()], &self.b1),
            ("w2", vec![self.w2.rows(), self.w2.cols()], self.w2.data()),
            ("b2", vec![self.b2.len()], &self.b2),
            ("wp", vec![self.wp.rows(), self.wp.cols()], self.wp.data()),
            ("bp", vec![self.bp.len()], &self.bp),
        ]
    }

    /// All parameters as one vector (w1, b1, w2, b2, wp, bp order).
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for (_, _, data) in self.tensors() {
            out.extend_from_slice(data);
        }
        out
    }

    pub fn from_flat(dims: EncoderDims, flat: &[f32]) -> Result<Self> {
        let mut p = EncoderParams::zeros(dims);
        let total = p.flatten().len();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "flat parameter vector of {} for encoder needing {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        };
        take(p.w1.data_mut());
        take(&mut p.b1);
        take(p.w2.data_mut());
        take(&mut p.b2);
        take(p.wp.data_mut());
        take(&mut p.bp);
        Ok(p)
    }
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    input: Matrix,
    h1: Matrix,
    h2: Matrix,
    norms: Vec<f32>,
    z: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Gradients, same shapes as [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f32>,
    pub w2: Matrix,
    pub b2: Vec<f32>,
    pub wp: Matrix,
    pub bp: Vec<f32>,
}

impl EncoderGrads {
    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.wp.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
            && self.bp.iter().all(|v| v.is_finite())
    }
}

fn relu_inplace(m: &mut Matrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backbone features `h` and unit-norm embeddings `z` for a batch, plus the
/// cache needed by [`backward`].
pub fn forward(params: &EncoderParams, batch: &Matrix) -> Result<(Matrix, Matrix, ForwardCache)> {
    let mut h1 = batch.matmul(&params.w1)?;
    h1.add_row_bias(&params.b1)?;
    relu_inplace(&mut h1);

    let mut h2 = h1.matmul(&params.w2)?;
    h2.add_row_bias(&params.b2)?;
    relu_inplace(&mut h2);

    let mut proj = h2.matmul(&params.wp)?;
    proj.add_row_bias(&params.bp)?;

    let mut z = proj.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let norm = l2_norm(z.row(r));
        if !(norm > 1e-12) {
            return Err(Error::DegenerateEmbedding(format!(
                "projection row {r} has norm {norm}"
            )));
        }
        for v in z.row_mut(r) {
            *v /= norm;
        }
        norms.push(norm);
    }

    let cache = ForwardCache { input: batch.clone(), h1, h2: h2.clone(), norms, z: z.clone() };
    Ok((h2, z, cache))
}

/// Pulls `grad` back through row normalization: `(I - u u^T) grad / norm`
/// where `u` is the unit output. The result is orthogonal to `u`.
pub fn l2_normalize_backward(unit: &[f32], norm: f32, grad: &[f32]) -> Vec<f32> {
    let along = dot(unit, grad);
    unit.iter().zip(grad).map(|(&u, &g)| (g - along * u) / norm).collect()
}

/// Exact gradients of a scalar loss with `d loss / d z = grad_z`.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_z: &Matrix,
) -> Result<EncoderGrads> {
    if grad_z.rows() != cache.z.rows() || grad_z.cols() != cache.z.cols() {
        return Err(Error::Shape(format!(
            "grad_z {}x{} vs embeddings {}x{}",
            grad_z.rows(),
            grad_z.cols(),
            cache.z.rows(),
            cache.z.cols()
        )));
    }

    let mut dproj = Matrix::zeros(grad_z.rows(), grad_z.cols());
    for r in 0..grad_z.rows() {
        let row = l2_normalize_backward(cache.z.row(r), cache.norms[r], grad_z.row(r));
        dproj.row_mut(r).copy_from_slice(&row);
    }

    let dwp = cache.h2.matmul_tn(&dproj)?;
    let dbp = dproj.col_sums();
    let mut dh2 = dproj.matmul_nt(&params.wp)?;
    for (g, &a) in dh2.data_mut().iter_mut().zip(cache.h2.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }

    let dw2 = cache.h1.matmul_tn(&dh2)?;
    let db2 = dh2.col_sums();
    let mut dh1 = dh2.matmul_nt(&params.w2)?;
    for (g, &a) in dh1.data_mut().iter_mut().zip(cache.h1.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }

    let dw1 = cache.input.matmul_tn(&dh1)?;
    let db1 = dh1.col_sums();

    Ok(EncoderGrads { w1: dw1, b1: db1, w2: dw2, b2: db2, wp: dwp, bp: dbp })
}

/// `p <- p - lr (g + weight_decay p)`, elementwise over all tensors.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate {lr} must be positive")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients contain NaN or Inf".into()));
    }
    let apply = |p: &mut [f32], g: &[f32]| {
        for (pv, &gv) in p.iter_mut().zip(g) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
    };
    apply(params.w1.data_mut(), grads.w1.data());
    apply(&mut params.b1, &grads.b1);
    apply(params.w2.data_mut(), grads.w2.data());
    apply(&mut params.b2, &grads.b2);
    apply(params.wp.data_mut(), grads.wp.data());
    apply(&mut params.bp, &grads.bp);
    Ok(())
}

/// Query encoder plus its momentum (key) twin.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub momentum: f32,
}

impl EncoderPair {
    /// Key starts as an exact copy of the query.
    pub fn new(query: EncoderParams, momentum: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Domain(format!("momentum {momentum} outside [0, 1]")));
        }
        let key = query.clone();
        Ok(EncoderPair { query, key, momentum })
    }

    /// `key <- m key + (1 - m) query`.
    pub fn momentum_update(&mut self) {
        let m = self.momentum;
        let blend = |k: &mut [f32], q: &[f32]| {
            for (kv, &qv) in k.iter_mut().zip(q) {
                *kv = m * *kv + (1.0 - m) * qv;
            }
        };
        blend(self.key.w1.data_mut(), self.query.w1.data());
        blend(&mut self.key.b1, &self.query.b1);
        blend(self.key.w2.data_mut(), self.query.w2.data());
        blend(&mut self.key.b2, &self.query.b2);
        blend(self.key.wp.data_mut(), self.query.wp.data());
        blend(&mut self.key.bp, &self.query.bp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, l2_norm};

    fn small_dims() -> EncoderDims {
        EncoderDims { d_in: 12, d_h: 6, d_z: 4 }
    }

    fn random_batch(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.next_f32()).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_degenerate_embedding() {
        let params = EncoderParams::zeros(small_dims());
        let batch = Matrix::zeros(2, 12);
        assert!(matches!(forward(&params, &batch), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let mut rng = RngStream::root(21).derive_label("unit");
        let params = EncoderParams::init(small_dims(), &mut rng);
        let batch = random_batch(5, 12, &mut rng);
        let (_, z, _) = forward(&params, &batch).unwrap();
        for r in 0..z.rows() {
            assert!((l2_norm(z.row(r)) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn identical_rows_map_to_identical_embeddings() {
        let mut rng = RngStream::root(22).derive_label("pure");
        let params = EncoderParams::init(small_dims(), &mut rng);
        let one = random_batch(1, 12, &mut rng);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let batch = Matrix::from_vec(2, 12, data).unwrap();
        let (_, z, _) = forward(&params, &batch).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn zero_grad_z_gives_zero_param_grads() {
        let mut rng = RngStream::root(23).derive_label("zero-grad");
        let params = EncoderParams::init(small_dims(), &mut rng);
        let batch = random_batch(3, 12, &mut rng);
        let (_, z, cache) = forward(&params, &batch).unwrap();
        let grads = backward(&params, &cache, &Matrix::zeros(z.rows(), z.cols())).unwrap();
        assert!(grads.w1.data().iter().all(|&v| v == 0.0));
        assert!(grads.wp.data().iter().all(|&v| v == 0.0));
        assert!(grads.bp.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_backward_is_orthogonal_to_output() {
        let mut rng = RngStream::root(24).derive_label("ortho");
        let params = EncoderParams::init(small_dims(), &mut rng);
        let batch = random_batch(4, 12, &mut rng);
        let (_, z, cache) = forward(&params, &batch).unwrap();
        for r in 0..4 {
            let grad: Vec<f32> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let back = l2_normalize_backward(z.row(r), cache.norms[r], &grad);
            assert!(dot(z.row(r), &back).abs() < 1e-5);
        }
    }

    /// Deterministic search for a test instance whose ReLU pre-activations
    /// and projection norms stay clear of the finite-difference step, so the
    /// central-difference oracle sees a smooth function.
    fn well_conditioned_instance(
        dims: EncoderDims,
        batch_rows: usize,
        margin: f32,
        salt: u64,
    ) -> (EncoderParams, Matrix) {
        for attempt in 0..2000 {
            let mut rng = RngStream::root(1000 + salt).derive(attempt);
            let mut params = EncoderParams::init(dims, &mut rng);
            // boost the projection so row norms sit well away from zero
            for v in params.wp.data_mut() {
                *v *= 4.0;
            }
            let batch = random_batch(batch_rows, dims.d_in, &mut rng);
            let h1 = {
                let mut m = batch.matmul(&params.w1).unwrap();
                m.add_row_bias(&params.b1).unwrap();
                m
            };
            let h1r = {
                let mut m = h1.clone();
                relu_inplace(&mut m);
                m
            };
            let h2 = {
                let mut m = h1r.matmul(&params.w2).unwrap();
                m.add_row_bias(&params.b2).unwrap();
                m
            };
            let min_pre = h1
                .data()
                .iter()
                .chain(h2.data())
                .fold(f32::INFINITY, |acc, &v| acc.min(v.abs()));
            if min_pre < margin {
                continue;
            }
            // small projection norms make the normalization sharply curved
            // and blow up the central-difference truncation error
            match forward(&params, &batch) {
                Ok((_, _, cache)) if cache.norms.iter().all(|&n| n > 0.6) => {
                    return (params, batch)
                }
                _ => continue,
            }
        }
        panic!("no well-conditioned instance found");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let dims = small_dims();
        let eps = 5e-3f32;
        // one perturbed parameter moves a pre-activation by at most eps
        // (inputs are bounded by 1), so a 2 eps margin keeps the ReLU
        // pattern fixed across every central-difference probe
        let (params, batch) = well_conditioned_instance(dims, 4, 2.0 * eps, 0);

        // Loss: fixed random linear functional of z.
        let mut grng = RngStream::root(404).derive_label("loss-weights");
        let gmat = Matrix::from_vec(
            4,
            dims.d_z,
            (0..4 * dims.d_z).map(|_| grng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();

        let loss = |flat: &[f32]| -> f32 {
            let p = EncoderParams::from_flat(dims, flat).unwrap();
            let (_, z, _) = forward(&p, &batch).unwrap();
            dot(z.data(), gmat.data())
        };

        let flat = params.flatten();
        let numeric = finite_diff_grad(loss, &flat, eps).unwrap();

        let (_, _, cache) = forward(&params, &batch).unwrap();
        let grads = backward(&params, &cache, &gmat).unwrap();
        let analytic = {
            let g = EncoderParams {
                w1: grads.w1,
                b1: grads.b1,
                w2: grads.w2,
                b2: grads.b2,
                wp: grads.wp,
                bp: grads.bp,
            };
            g.flatten()
        };

        let mut checked = 0usize;
        for (i, (&n, &a)) in numeric.iter().zip(&analytic).enumerate() {
            let denom = n.abs().max(a.abs());
            if denom < 1e-3 {
                continue; // both effectively zero at f32 resolution
            }
            let rel = (n - a).abs() / denom;
            assert!(rel < 1e-3 || (n - a).abs() < 1e-4, "coord {i}: {n} vs {a} (rel {rel})");
            checked += 1;
        }
        assert!(checked > 50, "only {checked} coordinates carried signal");
    }

    #[test]
    fn sgd_step_arithmetic() {
        let dims = EncoderDims { d_in: 1, d_h: 1, d_z: 1 };
        let mut p = EncoderParams::from_flat(dims, &[1.0; 6]).unwrap();
        let mut g = EncoderGrads {
            w1: Matrix::zeros(1, 1),
            b1: vec![0.0],
            w2: Matrix::zeros(1, 1),
            b2: vec![0.0],
            wp: Matrix::zeros(1, 1),
            bp: vec![0.0],
        };
        g.w1.set(0, 0, 2.0);
        sgd_step(&mut p, &g, 0.1, 0.0).unwrap();
        assert!((p.w1.get(0, 0) - 0.8).abs() < 1e-6);

        let mut p2 = EncoderParams::from_flat(dims, &[1.0; 6]).unwrap();
        g.w1.set(0, 0, 0.0);
        sgd_step(&mut p2, &g, 0.1, 0.1).unwrap();
        assert!((p2.w1.get(0, 0) - 0.99).abs() < 1e-6);
    }

    #[test]
    fn sgd_rejects_non_finite_grads() {
        let dims = small_dims();
        let mut rng = RngStream::root(25).derive(0);
        let mut p = EncoderParams::init(dims, &mut rng);
        let mut g = EncoderGrads {
            w1: Matrix::zeros(dims.d_in, dims.d_h),
            b1: vec![0.0; dims.d_h],
            w2: Matrix::zeros(dims.d_h, dims.d_h),
            b2: vec![0.0; dims.d_h],
            wp: Matrix::zeros(dims.d_h, dims.d_z),
            bp: vec![0.0; dims.d_z],
        };
        g.b1[0] = f32::NAN;
        assert!(matches!(sgd_step(&mut p, &g, 0.1, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn momentum_update_endpoints() {
        let dims = EncoderDims { d_in: 1, d_h: 1, d_z: 1 };
        let query = EncoderParams::from_flat(dims, &[2.0; 6]).unwrap();

        let mut frozen = EncoderPair::new(query.clone(), 1.0).unwrap();
        let key0 = EncoderParams::from_flat(dims, &[0.0; 6]).unwrap();
        frozen.key = key0.clone();
        frozen.momentum_update();
        assert_eq!(frozen.key, key0);

        let mut copied = EncoderPair::new(query.clone(), 0.0).unwrap();
        copied.key = key0.clone();
        copied.momentum_update();
        assert_eq!(copied.key, query);

        let mut halfway = EncoderPair::new(query, 0.5).unwrap();
        halfway.key = key0;
        halfway.momentum_update();
        assert!((halfway.key.w1.get(0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn momentum_contracts_key_toward_frozen_query() {
        let dims = small_dims();
        let mut rng = RngStream::root(26).derive(0);
        let query = EncoderParams::init(dims, &mut rng);
        let other = EncoderParams::init(dims, &mut rng);
        let mut pair = EncoderPair::new(query.clone(), 0.9).unwrap();
        pair.key = other;

        let gap = |p: &EncoderPair| {
            let q = p.query.flatten();
            let k = p.key.flatten();
            l2_norm(&q.iter().zip(&k).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let before = gap(&pair);
        pair.momentum_update();
        let after = gap(&pair);
        assert!((after / before - 0.9).abs() < 1e-4);
    }
}
