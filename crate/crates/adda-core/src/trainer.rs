//! The epoch loop: plan allocation, build two views per sample, score the
//! pretext task against the queue, backprop the probability-weighted loss,
//! update both encoders and the queue, then feed accuracy back into the
//! controller.
//!
//! Every random draw comes from a stream keyed by (seed, epoch, sample), so
//! runs are bit-reproducible for any worker count and resuming from a
//! checkpoint continues the exact original trajectory.

use std::time::Instant;

use crate::augment::Composition;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{LossWeighting, ProbabilitySource, TrainConfig};
use crate::contrastive::{infonce, ContrastiveOutcome, Queue};
use crate::data::Dataset;
use crate::encoder::{backward, forward, sgd_step, EncoderDims, EncoderPair, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::{prob_std, EpochStats, MetricsWriter};
use crate::numerics::Matrix;
use crate::parallel::{map_indexed, worker_count};
use crate::policy::{build_policy, AllocationMode, AllocationPolicy};
use crate::rng::RngStream;
use crate::scheduler::SamplerState;

/// Final state plus the per-epoch record of a run.
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub stats: Vec<EpochStats>,
}

/// Closed-loop pretraining from scratch.
pub fn pretrain(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainResult> {
    run(cfg, dataset, AllocationMode::Adaptive, None)
}

/// Continues a checkpointed run up to `cfg.epochs`.
pub fn resume(cfg: &TrainConfig, dataset: &Dataset, start: Checkpoint) -> Result<TrainResult> {
    run(cfg, dataset, AllocationMode::Adaptive, Some(start))
}

/// Open-loop comparator: the whole batch always goes to one composition.
/// Accuracy is still measured and reported, it just never moves allocation.
pub fn fixed_baseline(
    cfg: &TrainConfig,
    dataset: &Dataset,
    comp_index: usize,
) -> Result<TrainResult> {
    run(cfg, dataset, AllocationMode::Fixed(comp_index), None)
}

fn run(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mode: AllocationMode,
    start: Option<Checkpoint>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let n = cfg.n_comps();
    let comps = cfg.compositions(dataset.shape())?;
    let policy = build_policy(mode, n)?;
    let dims =
        EncoderDims { d_in: dataset.input_dim(), d_h: cfg.hidden_dim, d_z: cfg.embed_dim };
    if dataset.len() < cfg.batch_size {
        return Err(Error::InfeasiblePlan(format!(
            "dataset of {} cannot fill one batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }

    let root = RngStream::root(cfg.seed);
    let (mut pair, mut sampler, mut queue, start_epoch) = match start {
        Some(ck) => {
            if ck.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {}, config says {}",
                    ck.seed, cfg.seed
                )));
            }
            if ck.pair.query.dims() != dims {
                return Err(Error::Config(
                    "checkpoint encoder shape does not match config/dataset".into(),
                ));
            }
            if ck.sampler.len() != n {
                return Err(Error::Config(format!(
                    "checkpoint has {} compositions, config has {n}",
                    ck.sampler.len()
                )));
            }
            if ck.queue.capacity() != cfg.queue_capacity {
                return Err(Error::Config(format!(
                    "checkpoint queue capacity {} differs from config {}",
                    ck.queue.capacity(),
                    cfg.queue_capacity
                )));
            }
            if ck.epoch >= cfg.epochs {
                return Err(Error::Config(format!(
                    "checkpoint already covers {} epochs of a {}-epoch run",
                    ck.epoch, cfg.epochs
                )));
            }
            (ck.pair, ck.sampler, ck.queue, ck.epoch)
        }
        None => {
            let mut init_rng = root.derive_label("init");
            let query = EncoderParams::init(dims, &mut init_rng);
            let pair = EncoderPair::new(query, cfg.momentum)?;
            let sampler = if n == 1 {
                SamplerState::single(cfg.update_rate)?
            } else {
                SamplerState::init_uniform(n, cfg.update_rate)?
            };
            (pair, sampler, Queue::new(cfg.queue_capacity, cfg.embed_dim), 0)
        }
    };

    let threads = worker_count();
    let mut writer = MetricsWriter::create(&cfg.metrics_out, n)?;
    let mut all_stats = Vec::with_capacity((cfg.epochs - start_epoch) as usize);

    for epoch in start_epoch..cfg.epochs {
        let t0 = Instant::now();
        let mut stats = train_epoch(
            policy.as_ref(),
            &mut sampler,
            &mut pair,
            &mut queue,
            dataset,
            &comps,
            cfg,
            epoch,
            threads,
        )?;
        stats.seconds = t0.elapsed().as_secs_f64();
        writer.append(&stats)?;
        println!(
            "[{}] epoch {:>4}/{}  loss {:<9.5}  p_std {:.5}  {:.2}s",
            policy.name(),
            stats.epoch,
            cfg.epochs,
            stats.total_loss,
            stats.p_std,
            stats.seconds
        );
        all_stats.push(stats);

        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
            let snap = Checkpoint {
                pair: pair.clone(),
                sampler: sampler.clone(),
                queue: queue.clone(),
                epoch: done,
                seed: cfg.seed,
            };
            save_checkpoint(&snap, &cfg.checkpoint_out)?;
        }
    }

    let checkpoint =
        Checkpoint { pair, sampler, queue, epoch: cfg.epochs, seed: cfg.seed };
    save_checkpoint(&checkpoint, &cfg.checkpoint_out)?;
    Ok(TrainResult { checkpoint, stats: all_stats })
}

/// Loss weights per composition for one step.
fn loss_weights(cfg: &TrainConfig, probs: &[f32], split: &[usize]) -> Vec<f32> {
    match cfg.loss_weighting {
        LossWeighting::Probability => match cfg.probability_source {
            ProbabilitySource::Softmax => probs.to_vec(),
            ProbabilitySource::Realized => {
                let total: usize = split.iter().sum();
                split.iter().map(|&s| s as f32 / total as f32).collect()
            }
        },
        LossWeighting::Uniform => {
            let active = split.iter().filter(|&&s| s > 0).count().max(1);
            split
                .iter()
                .map(|&s| if s > 0 { 1.0 / active as f32 } else { 0.0 })
                .collect()
        }
    }
}

/// One epoch over the dataset. `epoch` is the 0-based epoch index; the
/// returned stats carry the 1-based number. Mutates the encoder pair, the
/// queue, and (via the accuracy feedback) the controller state.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    policy: &dyn AllocationPolicy,
    sampler: &mut SamplerState,
    pair: &mut EncoderPair,
    queue: &mut Queue,
    dataset: &Dataset,
    comps: &[Composition],
    cfg: &TrainConfig,
    epoch: u32,
    threads: usize,
) -> Result<EpochStats> {
    let n = comps.len();
    let batch = cfg.batch_size;
    let d_in = dataset.input_dim();
    let d_z = cfg.embed_dim;

    let probs = policy.allocation(sampler);
    let scores = sampler.scores().to_vec();
    let split = policy.batch_split(&probs, batch, cfg.min_subbatch)?;
    let weights = loss_weights(cfg, &probs, &split);

    // composition of each position within a batch
    let mut comp_of: Vec<usize> = Vec::with_capacity(batch);
    for (c, &size) in split.iter().enumerate() {
        comp_of.extend(std::iter::repeat(c).take(size));
    }

    let root = RngStream::root(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    root.derive_label("shuffle").derive(u64::from(epoch)).shuffle(&mut order);

    let steps = dataset.len() / batch; // drop-last rule
    debug_assert!(steps > 0);

    let mut step_acc_sum = vec![0.0f64; n];
    let mut step_loss_sum = vec![0.0f64; n];
    let mut total_loss_sum = 0.0f64;

    for step in 0..steps {
        let indices = &order[step * batch..(step + 1) * batch];

        let views: Vec<(Vec<f32>, Vec<f32>)> = map_indexed(batch, threads, |i| {
            let sample_rng = root
                .derive_label("sample")
                .derive(u64::from(epoch))
                .derive(indices[i] as u64);
            let (a, b) = comps[comp_of[i]]
                .two_views(dataset.image(indices[i]), &sample_rng)
                .expect("compositions validated at construction");
            (a.to_flat(), b.to_flat())
        });

        let mut xq = Matrix::zeros(batch, d_in);
        let mut xk = Matrix::zeros(batch, d_in);
        for (i, (a, b)) in views.iter().enumerate() {
            xq.row_mut(i).copy_from_slice(a);
            xk.row_mut(i).copy_from_slice(b);
        }

        let (_, zq, cache) = forward(&pair.query, &xq)?;
        let (_, zk, _) = forward(&pair.key, &xk)?;

        let outcomes: Vec<ContrastiveOutcome> =
            map_indexed(batch, threads, |i| infonce(zq.row(i), zk.row(i), queue, cfg.tau))
                .into_iter()
                .collect::<Result<_>>()?;

        // per-composition means for this step, in index order
        let mut loss_mean = vec![0.0f64; n];
        let mut correct = vec![0usize; n];
        for (i, out) in outcomes.iter().enumerate() {
            let c = comp_of[i];
            loss_mean[c] += f64::from(out.loss);
            correct[c] += usize::from(out.correct);
        }
        let mut step_total = 0.0f64;
        for c in 0..n {
            if split[c] == 0 {
                continue;
            }
            loss_mean[c] /= split[c] as f64;
            let acc = correct[c] as f64 / split[c] as f64;
            step_acc_sum[c] += acc;
            step_loss_sum[c] += loss_mean[c];
            step_total += f64::from(weights[c]) * loss_mean[c];
        }
        if !step_total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss diverged at epoch {} step {step}: {step_total}",
                epoch + 1
            )));
        }
        total_loss_sum += step_total;

        let mut grad_z = Matrix::zeros(batch, d_z);
        for (i, out) in outcomes.iter().enumerate() {
            let c = comp_of[i];
            let scale = weights[c] / split[c] as f32;
            for (g, &v) in grad_z.row_mut(i).iter_mut().zip(&out.grad_z) {
                *g = scale * v;
            }
        }

        let grads = backward(&pair.query, &cache, &grad_z).map_err(|e| {
            Error::NonFinite(format!("backward failed at epoch {} step {step}: {e}", epoch + 1))
        })?;
        sgd_step(&mut pair.query, &grads, cfg.lr, cfg.weight_decay).map_err(|e| {
            Error::NonFinite(format!("update failed at epoch {} step {step}: {e}", epoch + 1))
        })?;
        pair.momentum_update();
        queue.enqueue(&zk)?;
    }

    // epoch-level feedback: mean of per-step sub-batch accuracies
    let feedback: Vec<Option<f32>> = (0..n)
        .map(|c| {
            if split[c] > 0 {
                Some((step_acc_sum[c] / steps as f64) as f32)
            } else {
                None
            }
        })
        .collect();
    sampler.update(&feedback)?;

    let acc: Vec<f32> = feedback.iter().map(|a| a.unwrap_or(f32::NAN)).collect();
    let mean_loss: Vec<f32> = (0..n)
        .map(|c| {
            if split[c] > 0 {
                (step_loss_sum[c] / steps as f64) as f32
            } else {
                f32::NAN
            }
        })
        .collect();
    let sizes: Vec<usize> = split.iter().map(|&s| s * steps).collect();

    Ok(EpochStats {
        epoch: epoch + 1,
        p_std: prob_std(&probs),
        probs,
        scores,
        sizes,
        acc,
        mean_loss,
        total_loss: (total_loss_sum / steps as f64) as f32,
        seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenParams};
    use std::path::PathBuf;

    fn small_config(dir: &std::path::Path) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 2;
        cfg.batch_size = 32;
        cfg.queue_capacity = 64;
        cfg.hidden_dim = 16;
        cfg.embed_dim = 8;
        cfg.metrics_out = dir.join("metrics.csv");
        cfg.checkpoint_out = dir.join("model.adck");
        cfg
    }

    fn small_dataset() -> Dataset {
        generate_synthetic(
            GenParams { num_classes: 3, per_class: 40, height: 8, width: 8 },
            5,
        )
        .unwrap()
    }

    #[test]
    fn identical_seeds_produce_identical_stats() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let cfg = small_config(dir.path());
        let a = pretrain(&cfg, &ds).unwrap();
        let b = pretrain(&cfg, &ds).unwrap();
        for (x, y) in a.stats.iter().zip(&b.stats) {
            assert_eq!(crate::metrics::row(x), crate::metrics::row(y));
        }
        assert_eq!(a.checkpoint.pair, b.checkpoint.pair);
    }

    #[test]
    fn step_count_follows_drop_last_rule() {
        // 120 samples, batch 32 -> 3 steps; each composition sees
        // split * steps samples.
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let cfg = small_config(dir.path());
        let out = pretrain(&cfg, &ds).unwrap();
        let sizes_sum: usize = out.stats[0].sizes.iter().sum();
        assert_eq!(sizes_sum, 96, "3 full batches of 32, last 24 samples dropped");
    }

    #[test]
    fn single_composition_run_is_single_arm() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let mut cfg = small_config(dir.path());
        cfg.comps.truncate(1);
        let out = pretrain(&cfg, &ds).unwrap();
        assert_eq!(out.stats[0].probs, vec![1.0]);
        assert_eq!(out.stats[0].sizes, vec![96]);
    }

    #[test]
    fn fixed_baseline_keeps_one_hot_allocation() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let cfg = small_config(dir.path());
        let out = fixed_baseline(&cfg, &ds, 1).unwrap();
        for stats in &out.stats {
            assert_eq!(stats.probs, vec![0.0, 1.0, 0.0]);
            assert_eq!(stats.sizes[0], 0);
            assert!(stats.sizes[1] > 0);
            // accuracy is measured for the active arm, missing for others
            assert!(!stats.acc[1].is_nan());
            assert!(stats.acc[0].is_nan());
        }
    }

    #[test]
    fn metrics_file_has_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let mut cfg = small_config(dir.path());
        cfg.epochs = 4;
        pretrain(&cfg, &ds).unwrap();
        let table = crate::metrics::read_metrics(&cfg.metrics_out).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows.last().unwrap().epoch, 4);
    }

    #[test]
    fn queue_fills_and_stays_full() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let mut cfg = small_config(dir.path());
        cfg.queue_capacity = 48; // ceil(48/32) = 2 steps to fill
        let out = pretrain(&cfg, &ds).unwrap();
        assert!(out.checkpoint.queue.is_full());
    }

    #[test]
    fn undersized_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(
            GenParams { num_classes: 2, per_class: 5, height: 8, width: 8 },
            1,
        )
        .unwrap();
        let cfg = small_config(dir.path());
        assert!(matches!(pretrain(&cfg, &ds), Err(Error::InfeasiblePlan(_))));
    }

    #[test]
    fn resume_requires_matching_seed() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let mut cfg = small_config(dir.path());
        cfg.epochs = 2;
        let first = pretrain(&cfg, &ds).unwrap();
        cfg.epochs = 4;
        cfg.seed = 43;
        assert!(matches!(
            resume(&cfg, &ds, first.checkpoint),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_out_path_errors_preserve_partial_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let mut cfg = small_config(dir.path());
        cfg.checkpoint_out = PathBuf::from("/dev/null/cannot/create/here.adck");
        let err = pretrain(&cfg, &ds);
        assert!(err.is_err());
        // metrics rows for completed epochs are on disk
        let table = crate::metrics::read_metrics(&cfg.metrics_out).unwrap();
        assert_eq!(table.rows.len(), 2);
    }
}
