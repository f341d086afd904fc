//! The pretraining loop: shuffled view pairs, twin forward, blended loss,
//! SGD with momentum on the online branch, EMA onto the target branch.
//!
//! Determinism contract: everything random flows from named streams of the
//! config seed, and parameters plus momentum buffers are quantized through
//! f32 at initialization and after every epoch. A run that stops at epoch k
//! and resumes from its checkpoint therefore retraces the original run bit
//! for bit — checkpoints store f32.

use crate::data::{make_view_pair, skeleton, Dataset, SkeletonSequence};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{riemannian_grad_poincare, PoincarePoint};
use crate::model::{
    batch_tensor, ema_update, encoder_features, head_forward, twin_forward, Branch,
    SkeletonGraph, TwinForward, TwinModel,
};
use crate::objectives::{alpha_schedule, CurriculumSchedule, NegativeQueue};
use crate::streams::{domain, stream};
use crate::trainer::{config_hash, Checkpoint, LabConfig, TrainConfig};
use rand::Rng;
use std::time::Instant;

/// Per-epoch training diagnostics. Means are over samples, not batches, so
/// a short trailing batch is weighted by its actual size.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_h_norm: f64,
    pub mean_h_hat_norm: f64,
    pub mean_grad_norm: f64,
    pub alpha: f64,
    /// Measured, and deliberately left out of the CSV: two identical runs
    /// must produce identical files.
    pub wall_time_s: f64,
}

/// Render metrics as CSV. Floats use the shortest round-trip decimal form,
/// so equal runs give byte-equal files.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("epoch,mean_loss,mean_h_norm,mean_h_hat_norm,mean_grad_norm,alpha\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.mean_loss, r.mean_h_norm, r.mean_h_hat_norm, r.mean_grad_norm, r.alpha
        ));
    }
    out
}

/// The blend weight for this epoch after applying the ablation switches.
pub fn effective_alpha(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.without_hyperbolic {
        0.0
    } else if cfg.without_curriculum {
        1.0
    } else {
        let s = CurriculumSchedule::new(cfg.curriculum_start, cfg.curriculum_end)
            .expect("validated: curriculum_start < curriculum_end");
        alpha_schedule(epoch, s)
    }
}

/// Fisher–Yates permutation of `0..n` from the shuffle stream of `seed`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = stream(seed, domain::SHUFFLE, epoch as u64, 0);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn quantize_f32(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

fn quantize_model(model: &mut TwinModel) {
    for (_, p) in model.named_params_mut() {
        quantize_f32(p);
    }
}

struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    /// v ← μv + (g + λp); p ← p − lr·v, per parameter tensor.
    fn step(&mut self, params: Vec<(String, &mut Vec<f64>)>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.buffers.len() {
            return Err(Error::Shape(format!(
                "optimizer: {} parameters, {} gradients, {} buffers",
                params.len(),
                grads.len(),
                self.buffers.len()
            )));
        }
        for ((_, p), (g, buf)) in params.into_iter().zip(grads.iter().zip(&mut self.buffers)) {
            if g.len() != p.len() || buf.len() != p.len() {
                return Err(Error::Shape("optimizer: tensor size mismatch".into()));
            }
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                buf[i] = self.momentum * buf[i] + gi;
                p[i] -= self.lr * buf[i];
            }
        }
        Ok(())
    }
}

/// Negatives snapshot as a constant `(M, D)` tensor; `M = 0` when empty.
fn queue_tensor(tape: &mut Tape, queue: &NegativeQueue, d: usize) -> Result<NodeId> {
    let m = queue.len();
    let mut data = Vec::with_capacity(m * d);
    for row in queue.iter() {
        if row.len() != d {
            return Err(Error::Shape(format!(
                "queue entry has dim {}, embeddings have dim {d}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    Ok(tape.constant(Tensor::new(vec![m, d], data)?))
}

/// The contrastive logits under ball distance: column 0 is the aligned pair,
/// the rest are queue entries mapped into the ball; similarity is −distance.
fn poincare_logits(
    tape: &mut Tape,
    tf: &TwinForward,
    queue: &NegativeQueue,
    model: &TwinModel,
) -> Result<NodeId> {
    let n = tape.value(tf.h_online).shape()[0];
    let d = tape.value(tf.h_online).shape()[1];
    let c = model.curvature();
    let pos = tape.poincare_loss(tf.h_online, tf.h_target)?;
    let mut logits = tape.reshape(pos, vec![n, 1])?;
    for row in queue.iter() {
        let mut tiled = Vec::with_capacity(n * d);
        for _ in 0..n {
            tiled.extend_from_slice(row);
        }
        let neg = tape.constant(Tensor::new(vec![n, d], tiled)?);
        let neg_ball = tape.exp_map0(neg, c)?;
        let col = tape.poincare_loss(tf.h_online, neg_ball)?;
        let col = tape.reshape(col, vec![n, 1])?;
        logits = tape.concat(logits, col, 1)?;
    }
    Ok(logits)
}

/// One batch's scalar loss node.
fn batch_loss(
    tape: &mut Tape,
    tf: &TwinForward,
    model: &TwinModel,
    cfg: &TrainConfig,
    alpha: f64,
    queue: &NegativeQueue,
) -> Result<NodeId> {
    if cfg.with_negatives {
        let n = tape.value(tf.h_online).shape()[0];
        if cfg.infonce_poincare_similarity {
            let logits = poincare_logits(tape, tf, queue, model)?;
            let scaled = tape.scale(logits, -1.0 / cfg.tau)?;
            tape.softmax_cross_entropy(scaled, &vec![0; n])
        } else {
            let d = tape.value(tf.z_online).shape()[1];
            let negs = queue_tensor(tape, queue, d)?;
            tape.infonce(tf.z_online, tf.z_target, negs, cfg.tau)
        }
    } else {
        let pl = tape.poincare_loss(tf.h_online, tf.h_target)?;
        let pm = tape.mean_axis(pl, 0)?;
        let cl = tape.cosine_loss(tf.h_online, tf.h_target)?;
        let cm = tape.mean_axis(cl, 0)?;
        let weighted_p = tape.scale(pm, alpha)?;
        let weighted_c = tape.scale(cm, 1.0 - alpha)?;
        tape.add(weighted_p, weighted_c)
    }
}

/// Push the current model's target projections of the first sequences into
/// the queue, so a contrastive run never starts with an empty denominator.
fn warm_start_queue(
    queue: &mut NegativeQueue,
    model: &TwinModel,
    dataset: &Dataset,
) -> Result<()> {
    let take = queue.capacity().min(dataset.sequences.len());
    for chunk in dataset.sequences[..take].chunks(64) {
        let x = batch_tensor(chunk)?;
        let feats = encoder_features(model, &x, Branch::Target)?;
        let z = head_forward(&feats, &model.target_projector)?;
        let d = z.shape()[1];
        for i in 0..chunk.len() {
            queue.push(&z.data()[i * d..(i + 1) * d])?;
        }
    }
    Ok(())
}

struct BatchStats {
    loss: f64,
    sum_h_norm: f64,
    sum_h_hat_norm: f64,
    sum_grad_norm: f64,
}

/// Forward, backward and update for one batch; returns per-batch means and
/// norm sums for the epoch metrics.
fn train_batch(
    model: &mut TwinModel,
    sgd: &mut Sgd,
    queue: &mut NegativeQueue,
    views: (&[SkeletonSequence], &[SkeletonSequence]),
    cfg: &TrainConfig,
    alpha: f64,
) -> Result<BatchStats> {
    let x_online = batch_tensor(views.0)?;
    let x_target = batch_tensor(views.1)?;
    let mut tape = Tape::new();
    let tf = twin_forward(&mut tape, model, &x_online, &x_target)?;
    let loss_id = batch_loss(&mut tape, &tf, model, cfg, alpha, queue)?;
    let loss = tape.value(loss_id).item()?;

    let grads = tape.backward(loss_id)?;
    let grad_vecs: Vec<Vec<f64>> = tf
        .online_refs
        .iter()
        .map(|r| match grads.wrt(r.id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; tape.value(r.id).len()],
        })
        .collect();
    sgd.step(model.online_params_mut(), &grad_vecs)?;
    ema_update(model);

    if cfg.with_negatives {
        let z = tape.value(tf.z_target);
        let d = z.shape()[1];
        for i in 0..z.shape()[0] {
            queue.push(&z.data()[i * d..(i + 1) * d])?;
        }
    }

    let c = model.curvature();
    let h = tape.value(tf.h_online);
    let t = tape.value(tf.h_target);
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let mut stats =
        BatchStats { loss, sum_h_norm: 0.0, sum_h_hat_norm: 0.0, sum_grad_norm: 0.0 };
    for i in 0..n {
        let hp = PoincarePoint::new(h.data()[i * d..(i + 1) * d].to_vec(), c)?;
        let tp = PoincarePoint::new(t.data()[i * d..(i + 1) * d].to_vec(), c)?;
        stats.sum_h_norm += hp.radius();
        stats.sum_h_hat_norm += tp.radius();
        let g = riemannian_grad_poincare(&hp, &tp)?;
        stats.sum_grad_norm += g.grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    Ok(stats)
}

/// Run (or resume) pretraining on `dataset`. Returns the final checkpoint
/// and one metrics row per completed epoch in this call.
pub fn pretrain(
    cfg: &LabConfig,
    dataset: &Dataset,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    cfg.validate()?;
    if dataset.sequences.is_empty() {
        return Err(Error::InvalidInput("cannot pretrain on an empty dataset".into()));
    }
    if dataset.v != skeleton::V {
        return Err(Error::InvalidInput(format!(
            "dataset has {} joints, the model skeleton has {}",
            dataset.v,
            skeleton::V
        )));
    }
    let seed = cfg.seed;
    let own_hash = config_hash(cfg);

    let (mut model, buffers, start_epoch) = match resume {
        Some(ckpt) => {
            if ckpt.config_hash != own_hash {
                eprintln!(
                    "warning: checkpoint was produced by config {}, resuming under {}",
                    crate::trainer::hash_hex(&ckpt.config_hash),
                    crate::trainer::hash_hex(&own_hash)
                );
            }
            if ckpt.epoch > cfg.train.epochs {
                return Err(Error::InvalidInput(format!(
                    "checkpoint is at epoch {}, past the requested {}",
                    ckpt.epoch, cfg.train.epochs
                )));
            }
            let buffers: Vec<Vec<f64>> = ckpt.momentum.iter().map(|(_, b)| b.clone()).collect();
            (ckpt.model, buffers, ckpt.epoch)
        }
        None => {
            let model = TwinModel::init(cfg.model.clone(), SkeletonGraph::default_desk(), seed)?;
            let buffers = model
                .named_params()
                .iter()
                .filter(|(n, _, _)| n.starts_with("online."))
                .map(|(_, _, p)| vec![0.0; p.len()])
                .collect();
            (model, buffers, 0)
        }
    };
    quantize_model(&mut model);
    let mut sgd = Sgd {
        lr: cfg.train.lr,
        momentum: cfg.train.momentum,
        weight_decay: cfg.train.weight_decay,
        buffers,
    };
    for b in &mut sgd.buffers {
        quantize_f32(b);
    }

    let mut queue = NegativeQueue::new(cfg.train.queue_capacity);
    if cfg.train.with_negatives {
        warm_start_queue(&mut queue, &model, dataset)?;
    }

    let n = dataset.sequences.len();
    let mut metrics = Vec::new();
    for epoch in start_epoch..cfg.train.epochs {
        let t0 = Instant::now();
        let alpha = effective_alpha(&cfg.train, epoch);
        let order = shuffled_indices(n, seed, epoch);
        let (mut sum_loss, mut sum_h, mut sum_t, mut sum_g) = (0.0, 0.0, 0.0, 0.0);

        for (bi, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut online_views = Vec::with_capacity(chunk.len());
            let mut target_views = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (on, tg) = make_view_pair(
                    &dataset.sequences[i],
                    &cfg.data.augment,
                    &skeleton::MIRROR,
                    seed,
                    epoch,
                );
                online_views.push(on);
                target_views.push(tg);
            }
            let stats = train_batch(
                &mut model,
                &mut sgd,
                &mut queue,
                (&online_views, &target_views),
                &cfg.train,
                alpha,
            )
            .map_err(|e| e.with_context(format!("epoch {epoch}, batch {bi}")))?;
            sum_loss += stats.loss * chunk.len() as f64;
            sum_h += stats.sum_h_norm;
            sum_t += stats.sum_h_hat_norm;
            sum_g += stats.sum_grad_norm;
        }

        quantize_model(&mut model);
        for b in &mut sgd.buffers {
            quantize_f32(b);
        }
        metrics.push(MetricsRow {
            epoch,
            mean_loss: sum_loss / n as f64,
            mean_h_norm: sum_h / n as f64,
            mean_h_hat_norm: sum_t / n as f64,
            mean_grad_norm: sum_g / n as f64,
            alpha,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }

    let momentum: Vec<(String, Vec<f64>)> = model
        .online_params_mut()
        .into_iter()
        .map(|(name, _)| name)
        .zip(sgd.buffers)
        .collect();
    let ckpt = Checkpoint { model, momentum, epoch: cfg.train.epochs, config_hash: own_hash };
    Ok((ckpt, metrics))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::trainer::{checkpoint_bytes, ClassConfig, LabConfig};

    /// Two fast-moving classes, a handful of samples, tiny model.
    pub(crate) fn tiny_config() -> LabConfig {
        let mut cfg = LabConfig::desk();
        cfg.seed = 3;
        cfg.data.classes = vec![
            ClassConfig {
                label: "a".into(),
                amplitude: 0.2,
                frequency: 1.0,
                moving_joints: vec![4, 5],
                noise_sigma: 0.01,
            },
            ClassConfig {
                label: "b".into(),
                amplitude: 0.9,
                frequency: 2.0,
                moving_joints: vec![6, 7],
                noise_sigma: 0.01,
            },
        ];
        cfg.data.n_per_class = 8;
        cfg.data.frames = 8;
        cfg.model.feature_dim = 8;
        cfg.model.hidden_channels = 4;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 8;
        cfg.train.curriculum_start = 0;
        cfg.train.curriculum_end = 2;
        cfg.train.queue_capacity = 16;
        cfg.probe.epochs = 10;
        cfg.probe.batch_size = 16;
        cfg
    }

    fn run(cfg: &LabConfig) -> (Checkpoint, Vec<MetricsRow>) {
        let ds = cfg.data.generate(cfg.seed).unwrap();
        pretrain(cfg, &ds, None).unwrap()
    }

    #[test]
    fn zero_epochs_returns_the_initialization_untouched() {
        let mut cfg = tiny_config();
        cfg.train.epochs = 0;
        cfg.train.without_curriculum = true; // schedule may exceed a zero-epoch run
        let ds = cfg.data.generate(cfg.seed).unwrap();
        let (ckpt, metrics) = pretrain(&cfg, &ds, None).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(ckpt.epoch, 0);

        let mut reference =
            TwinModel::init(cfg.model.clone(), SkeletonGraph::default_desk(), cfg.seed).unwrap();
        quantize_model(&mut reference);
        for ((na, _, pa), (nb, _, pb)) in ckpt.model.named_params().iter().zip(reference.named_params())
        {
            assert_eq!(na, &nb);
            assert_eq!(pa, &pb, "{na} differs from the quantized initialization");
        }
        assert!(ckpt.momentum.iter().all(|(_, b)| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = tiny_config();
        let (ck_a, m_a) = run(&cfg);
        let (ck_b, m_b) = run(&cfg);
        assert_eq!(checkpoint_bytes(&ck_a), checkpoint_bytes(&ck_b));
        assert_eq!(metrics_csv(&m_a), metrics_csv(&m_b));

        let mut other = cfg.clone();
        other.seed = 4;
        let (ck_c, m_c) = run(&other);
        assert_ne!(checkpoint_bytes(&ck_a), checkpoint_bytes(&ck_c));
        assert_ne!(metrics_csv(&m_a), metrics_csv(&m_c));
    }

    #[test]
    fn resuming_from_a_checkpoint_retraces_the_full_run() {
        let cfg = tiny_config();
        let ds = cfg.data.generate(cfg.seed).unwrap();
        let (full, full_metrics) = pretrain(&cfg, &ds, None).unwrap();

        let mut first = cfg.clone();
        first.train.epochs = 1;
        // A schedule ending inside the short run gives the same alpha at
        // epoch 0 (zero at the schedule start) as the full run's schedule.
        first.train.curriculum_end = 1;
        let (half, _) = pretrain(&first, &ds, None).unwrap();
        let (resumed, resumed_metrics) = pretrain(&cfg, &ds, Some(half)).unwrap();

        assert_eq!(resumed_metrics.len(), 1);
        assert_eq!(resumed_metrics[0].epoch, 1);
        let full_row = &full_metrics[1];
        let res_row = &resumed_metrics[0];
        assert_eq!(full_row.mean_loss, res_row.mean_loss);
        assert_eq!(full_row.mean_grad_norm, res_row.mean_grad_norm);
        assert_eq!(
            checkpoint_bytes(&full),
            checkpoint_bytes(&Checkpoint { config_hash: full.config_hash, ..resumed }),
            "resumed run must match the uninterrupted one bit for bit"
        );
    }

    #[test]
    fn ablation_flags_pin_alpha() {
        let mut cfg = tiny_config();
        cfg.train.without_hyperbolic = true;
        let (_, metrics) = run(&cfg);
        assert!(metrics.iter().all(|r| r.alpha == 0.0));

        let mut cfg = tiny_config();
        cfg.train.without_curriculum = true;
        let (_, metrics) = run(&cfg);
        assert!(metrics.iter().all(|r| r.alpha == 1.0));

        let cfg = tiny_config();
        let (_, metrics) = run(&cfg);
        assert_eq!(metrics[0].alpha, 0.0);
        assert_eq!(metrics[1].alpha, 0.5);
    }

    #[test]
    fn negatives_run_trains_and_fills_the_queue() {
        let mut cfg = tiny_config();
        cfg.train.with_negatives = true;
        let (ckpt, metrics) = run(&cfg);
        assert_eq!(metrics.len(), 2);
        assert!(metrics.iter().all(|r| r.mean_loss.is_finite() && r.mean_loss > 0.0));
        assert_eq!(ckpt.epoch, 2);

        let mut cfg = tiny_config();
        cfg.train.with_negatives = true;
        cfg.train.infonce_poincare_similarity = true;
        let (_, metrics) = run(&cfg);
        assert!(metrics.iter().all(|r| r.mean_loss.is_finite() && r.mean_loss > 0.0));
    }

    #[test]
    fn metrics_csv_has_no_wall_time_and_round_trips() {
        let cfg = tiny_config();
        let (_, metrics) = run(&cfg);
        let csv = metrics_csv(&metrics);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,mean_loss,mean_h_norm,mean_h_hat_norm,mean_grad_norm,alpha"
        );
        for (row, line) in metrics.iter().zip(lines) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6);
            assert_eq!(fields[0].parse::<usize>().unwrap(), row.epoch);
            assert_eq!(fields[1].parse::<f64>().unwrap(), row.mean_loss);
            assert_eq!(fields[5].parse::<f64>().unwrap(), row.alpha);
        }
    }

    #[test]
    fn shuffle_is_a_permutation_and_epoch_dependent() {
        let a = shuffled_indices(50, 9, 0);
        let b = shuffled_indices(50, 9, 1);
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, shuffled_indices(50, 9, 0));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = tiny_config();
        let mut ds = cfg.data.generate(cfg.seed).unwrap();
        ds.sequences.clear();
        assert!(matches!(pretrain(&cfg, &ds, None), Err(Error::InvalidInput(_))));
    }
}
