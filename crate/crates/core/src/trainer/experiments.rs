//! Multi-run protocols: the ablation grid, the hard/easy uncertainty split,
//! and the probe batch-size sweep. Runs are internally serial and fully
//! seeded, so farming independent runs out to threads changes wall time
//! only — results are identical at any thread count.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::norm;
use crate::model::{batch_tensor, hyperbolic_embeddings, Branch, TwinModel};
use crate::trainer::{linear_probe, pretrain, Checkpoint, LabConfig};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Run `n_jobs` independent jobs on up to `threads` workers (0 or 1 means
/// strictly serial) and return their results in job order. Fails with the
/// first error in job order.
pub fn run_parallel<T, F>(n_jobs: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = threads.clamp(1, n_jobs.max(1));
    if workers <= 1 {
        return (0..n_jobs).map(f).collect();
    }
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n_jobs).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_jobs {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub name: String,
    pub final_loss: f64,
    /// Mean online-embedding radius in the last epoch.
    pub final_mean_radius: f64,
    pub probe_accuracy: f64,
    /// Every metric in every epoch was finite (the run would have aborted
    /// otherwise, but the table states it explicitly).
    pub all_finite: bool,
}

fn ablation_arms(base: &LabConfig) -> Vec<(String, LabConfig)> {
    let mut baseline = base.clone();
    baseline.train.with_negatives = false;
    baseline.train.without_hyperbolic = false;
    baseline.train.without_curriculum = false;
    let mut negatives = baseline.clone();
    negatives.train.with_negatives = true;
    let mut no_hyp = baseline.clone();
    no_hyp.train.without_hyperbolic = true;
    let mut no_cur = baseline.clone();
    no_cur.train.without_curriculum = true;
    vec![
        ("baseline".into(), baseline),
        ("with_negatives".into(), negatives),
        ("without_hyperbolic".into(), no_hyp),
        ("without_curriculum".into(), no_cur),
    ]
}

/// Pretrain and probe the four switch settings on one dataset.
pub fn run_ablation_grid(
    cfg: &LabConfig,
    dataset: &Dataset,
    threads: usize,
) -> Result<Vec<AblationResult>> {
    if cfg.train.epochs == 0 {
        return Err(Error::InvalidInput("the ablation grid needs at least one epoch".into()));
    }
    let arms = ablation_arms(cfg);
    run_parallel(arms.len(), threads, |i| {
        let (name, arm_cfg) = &arms[i];
        let (ckpt, metrics) = pretrain(arm_cfg, dataset, None)?;
        let report = linear_probe(&ckpt.model, dataset, &arm_cfg.probe, arm_cfg.seed)?;
        let last = metrics.last().expect("epochs >= 1");
        let all_finite = metrics.iter().all(|r| {
            r.mean_loss.is_finite()
                && r.mean_h_norm.is_finite()
                && r.mean_h_hat_norm.is_finite()
                && r.mean_grad_norm.is_finite()
        });
        Ok(AblationResult {
            name: name.clone(),
            final_loss: last.mean_loss,
            final_mean_radius: last.mean_h_norm,
            probe_accuracy: report.accuracy,
            all_finite,
        })
    })
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = String::from("arm,final_loss,final_mean_radius,probe_accuracy,all_finite\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.final_loss, r.final_mean_radius, r.probe_accuracy, r.all_finite
        ));
    }
    out
}

/// Target-branch radii of every sequence, in dataset order.
fn sample_radii(model: &TwinModel, dataset: &Dataset) -> Result<Vec<f64>> {
    let mut radii = Vec::with_capacity(dataset.sequences.len());
    for chunk in dataset.sequences.chunks(64) {
        let x = batch_tensor(chunk)?;
        let h = hyperbolic_embeddings(model, &x, Branch::Target)?;
        let d = h.shape()[1];
        for i in 0..chunk.len() {
            radii.push(norm(&h.data()[i * d..(i + 1) * d]));
        }
    }
    Ok(radii)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SplitReport {
    pub full_accuracy: f64,
    pub hard_accuracy: f64,
    pub easy_accuracy: f64,
    /// Dataset indices, least confident (smallest radius) first.
    pub hard_ids: Vec<usize>,
    pub easy_ids: Vec<usize>,
}

/// Rank samples by the full model's confidence, pretrain afresh on the
/// least-confident and most-confident halves, and probe all three models
/// on the same split of the full dataset. An odd sample count puts the
/// extra sample — and always the least confident one — in the hard half.
pub fn hard_easy_split(
    cfg: &LabConfig,
    dataset: &Dataset,
    full: &Checkpoint,
    threads: usize,
) -> Result<SplitReport> {
    let n = dataset.sequences.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 samples to split, got {n}")));
    }
    let radii = sample_radii(&full.model, dataset)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let half = n.div_ceil(2);
    let hard_ids = order[..half].to_vec();
    let easy_ids = order[half..].to_vec();

    let subset = |ids: &[usize]| Dataset {
        sequences: ids.iter().map(|&i| dataset.sequences[i].clone()).collect(),
        t: dataset.t,
        v: dataset.v,
        n_classes: dataset.n_classes,
        seed: dataset.seed,
    };
    let halves = [subset(&hard_ids), subset(&easy_ids)];
    let ckpts = run_parallel(2, threads, |i| Ok(pretrain(cfg, &halves[i], None)?.0))?;

    let probe = |model: &TwinModel| linear_probe(model, dataset, &cfg.probe, cfg.seed);
    Ok(SplitReport {
        full_accuracy: probe(&full.model)?.accuracy,
        hard_accuracy: probe(&ckpts[0].model)?.accuracy,
        easy_accuracy: probe(&ckpts[1].model)?.accuracy,
        hard_ids,
        easy_ids,
    })
}

pub const SWEEP_BATCHES: [usize; 5] = [512, 256, 128, 64, 32];

/// Probe one trained model at several probe batch sizes.
pub fn sweep_probe_batches(
    cfg: &LabConfig,
    dataset: &Dataset,
    ckpt: &Checkpoint,
    threads: usize,
) -> Result<Vec<(usize, f64)>> {
    let results = run_parallel(SWEEP_BATCHES.len(), threads, |i| {
        let mut probe_cfg = cfg.probe.clone();
        probe_cfg.batch_size = SWEEP_BATCHES[i].min(dataset.sequences.len().max(1));
        let report = linear_probe(&ckpt.model, dataset, &probe_cfg, cfg.seed)?;
        Ok((SWEEP_BATCHES[i], report.accuracy))
    })?;
    Ok(results)
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("batch_size,accuracy\n");
    for (batch, acc) in rows {
        out.push_str(&format!("{batch},{acc}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::pretrain::tests::tiny_config;

    #[test]
    fn parallel_jobs_return_in_order_and_propagate_errors() {
        let vals = run_parallel(8, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(vals, vec![0, 1, 4, 9, 16, 25, 36, 49]);
        let serial = run_parallel(8, 0, |i| Ok(i * i)).unwrap();
        assert_eq!(serial, vals);

        let r: Result<Vec<usize>> = run_parallel(4, 2, |i| {
            if i == 2 {
                Err(Error::InvalidInput("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ablation_grid_covers_all_arms_and_is_thread_invariant() {
        let cfg = tiny_config();
        let ds = cfg.data.generate(cfg.seed).unwrap();
        let serial = run_ablation_grid(&cfg, &ds, 1).unwrap();
        let names: Vec<&str> = serial.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["baseline", "with_negatives", "without_hyperbolic", "without_curriculum"]);
        assert!(serial.iter().all(|r| r.all_finite));
        assert!(serial.iter().all(|r| r.final_loss.is_finite()));

        let parallel = run_ablation_grid(&cfg, &ds, 4).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.final_loss, b.final_loss, "threading changed arm {}", a.name);
            assert_eq!(a.probe_accuracy, b.probe_accuracy);
        }

        let csv = ablation_csv(&serial);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("arm,"));
    }

    #[test]
    fn split_partitions_the_dataset_with_the_extra_sample_in_hard() {
        let mut cfg = tiny_config();
        cfg.data.n_per_class = 7;
        let mut ds = cfg.data.generate(cfg.seed).unwrap();
        ds.sequences.pop(); // odd total: 13 samples, so hard gets 7, easy 6
        let (full, _) = pretrain(&cfg, &ds, None).unwrap();
        let report = hard_easy_split(&cfg, &ds, &full, 2).unwrap();

        assert_eq!(report.hard_ids.len(), 7);
        assert_eq!(report.easy_ids.len(), 6);
        let mut all: Vec<usize> =
            report.hard_ids.iter().chain(&report.easy_ids).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());

        let radii = sample_radii(&full.model, &ds).unwrap();
        let min_radius_id = (0..13).min_by(|&a, &b| radii[a].total_cmp(&radii[b])).unwrap();
        assert!(
            report.hard_ids.contains(&min_radius_id),
            "the least-confident sample must land in the hard half"
        );
        for acc in [report.full_accuracy, report.hard_accuracy, report.easy_accuracy] {
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn sweep_reports_every_requested_batch_size() {
        let cfg = tiny_config();
        let ds = cfg.data.generate(cfg.seed).unwrap();
        let (ckpt, _) = pretrain(&cfg, &ds, None).unwrap();
        let rows = sweep_probe_batches(&cfg, &ds, &ckpt, 2).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), SWEEP_BATCHES.to_vec());
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.1)));
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 6);
    }
}
