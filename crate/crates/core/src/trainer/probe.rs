//! Linear evaluation: freeze the online encoder, fit a softmax classifier
//! on its features, report held-out accuracy. Optionally unfreeze the
//! encoder (fine-tuning). The probe optimizer never applies weight decay —
//! evaluation should not regularize the quantity being measured.

use crate::data::Dataset;
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{batch_tensor, encoder_features, encoder_on_tape_trainable, Branch, TwinModel};
use crate::streams::{domain, stream};
use crate::trainer::ProbeConfig;
use rand::Rng;

const FEATURE_CHUNK: usize = 64;

/// A trained linear softmax head: logits = x·w + b.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    /// `(d, k)` row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub d: usize,
    pub k: usize,
}

impl SoftmaxClassifier {
    fn zeros(d: usize, k: usize) -> Self {
        SoftmaxClassifier { w: vec![0.0; d * k], b: vec![0.0; k], d, k }
    }

    /// Argmax class for one feature row; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..self.k {
            let v = self.b[j] + x.iter().enumerate().map(|(i, xi)| xi * self.w[i * self.k + j]).sum::<f64>();
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &[f64], labels: &[usize]) -> f64 {
        let n = labels.len();
        let correct = (0..n)
            .filter(|&i| self.predict(&features[i * self.d..(i + 1) * self.d]) == labels[i])
            .count();
        correct as f64 / n as f64
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub n_train: usize,
    /// Training rows actually labeled (after `label_fraction`).
    pub n_labeled: usize,
    pub n_test: usize,
    pub label_fraction: f64,
    pub finetune: bool,
}

/// The step size after the two scheduled drops: ×0.1 at 60% of the epochs,
/// ×0.1 again at 80%.
fn scheduled_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    let mut lr = base;
    if epoch * 10 >= epochs * 6 {
        lr *= 0.1;
    }
    if epoch * 10 >= epochs * 8 {
        lr *= 0.1;
    }
    lr
}

fn shuffle_in_place(order: &mut [usize], rng: &mut impl Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Fit a softmax head on fixed features `(n, d)` with momentum SGD from a
/// zero initialization. Deterministic given the seed.
pub fn train_softmax(
    features: &[f64],
    labels: &[usize],
    d: usize,
    k: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<SoftmaxClassifier> {
    if d == 0 || k < 2 {
        return Err(Error::InvalidInput(format!("classifier needs d >= 1 and k >= 2, got ({d}, {k})")));
    }
    if labels.is_empty() || features.len() != labels.len() * d {
        return Err(Error::Shape(format!(
            "{} feature values for {} labels of dim {d}",
            features.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
    }
    let n = labels.len();
    let mut clf = SoftmaxClassifier::zeros(d, k);
    let mut vw = vec![0.0; d * k];
    let mut vb = vec![0.0; k];
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(cfg.lr, epoch, cfg.epochs);
        let mut rng = stream(seed, domain::PROBE, epoch as u64, 1);
        shuffle_in_place(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend_from_slice(&features[i * d..(i + 1) * d]);
                y.push(labels[i]);
            }
            let mut tape = Tape::new();
            let x_id = tape.constant(Tensor::new(vec![chunk.len(), d], x)?);
            let w_id = tape.leaf(Tensor::new(vec![d, k], clf.w.clone())?);
            let b_id = tape.leaf(Tensor::new(vec![k], clf.b.clone())?);
            let xw = tape.matmul(x_id, w_id)?;
            let logits = tape.add(xw, b_id)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?;
            let gw = grads.wrt(w_id).expect("w reaches the loss");
            let gb = grads.wrt(b_id).expect("b reaches the loss");
            for i in 0..clf.w.len() {
                vw[i] = cfg.momentum * vw[i] + gw.data()[i];
                clf.w[i] -= lr * vw[i];
            }
            for i in 0..clf.b.len() {
                vb[i] = cfg.momentum * vb[i] + gb.data()[i];
                clf.b[i] -= lr * vb[i];
            }
        }
    }
    Ok(clf)
}

/// Stratified train/test indices plus the labeled subset of train.
struct Split {
    train: Vec<usize>,
    labeled: Vec<usize>,
    test: Vec<usize>,
}

fn stratified_split(dataset: &Dataset, cfg: &ProbeConfig, seed: u64) -> Result<Split> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in dataset.sequences.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    let mut split = Split { train: Vec::new(), labeled: Vec::new(), test: Vec::new() };
    for (&class, idxs) in &by_class {
        let mut idxs = idxs.clone();
        let mut rng = stream(seed, domain::PROBE, class as u64, 0);
        shuffle_in_place(&mut idxs, &mut rng);
        let n_test = ((idxs.len() as f64 * cfg.test_fraction).round() as usize).max(1);
        if n_test >= idxs.len() {
            return Err(Error::InvalidInput(format!(
                "class {class} has {} samples; not enough to hold out {n_test}",
                idxs.len()
            )));
        }
        let (test, train) = idxs.split_at(n_test);
        let n_labeled = ((train.len() as f64 * cfg.label_fraction).ceil() as usize).max(1);
        split.test.extend_from_slice(test);
        split.train.extend_from_slice(train);
        split.labeled.extend_from_slice(&train[..n_labeled]);
    }
    Ok(split)
}

/// Contiguous class indices in ascending class-id order.
fn class_index(dataset: &Dataset) -> std::collections::BTreeMap<usize, usize> {
    let mut ids: Vec<usize> = dataset.sequences.iter().map(|s| s.class_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
}

fn features_for(model: &TwinModel, dataset: &Dataset, idxs: &[usize]) -> Result<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    let mut d = 0;
    for chunk in idxs.chunks(FEATURE_CHUNK) {
        let seqs: Vec<_> = chunk.iter().map(|&i| dataset.sequences[i].clone()).collect();
        let x = batch_tensor(&seqs)?;
        let f = encoder_features(model, &x, Branch::Online)?;
        d = f.shape()[1];
        out.extend_from_slice(f.data());
    }
    Ok((out, d))
}

/// Fine-tune a clone of the encoder together with the classifier head.
fn finetune_encoder(
    model: &TwinModel,
    dataset: &Dataset,
    split: &Split,
    labels: &[usize],
    k: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(TwinModel, SoftmaxClassifier)> {
    let mut tuned = model.clone();
    let d = tuned.config.feature_dim;
    let mut clf = SoftmaxClassifier::zeros(d, k);
    let n_enc = tuned.online_encoder.blocks.len() * 6;
    let mut enc_buf: Vec<Vec<f64>> = tuned
        .online_params_mut()
        .into_iter()
        .take(n_enc)
        .map(|(_, p)| vec![0.0; p.len()])
        .collect();
    let mut vw = vec![0.0; d * k];
    let mut vb = vec![0.0; k];
    let mut order: Vec<usize> = (0..split.labeled.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(cfg.finetune_lr, epoch, cfg.epochs);
        let mut rng = stream(seed, domain::PROBE, epoch as u64, 1);
        shuffle_in_place(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<_> =
                chunk.iter().map(|&i| dataset.sequences[split.labeled[i]].clone()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = batch_tensor(&seqs)?;
            let mut tape = Tape::new();
            let (feat, refs) = encoder_on_tape_trainable(&mut tape, &tuned, &x)?;
            let w_id = tape.leaf(Tensor::new(vec![d, k], clf.w.clone())?);
            let b_id = tape.leaf(Tensor::new(vec![k], clf.b.clone())?);
            let xw = tape.matmul(feat, w_id)?;
            let logits = tape.add(xw, b_id)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?;

            {
                let params = tuned.online_params_mut();
                for (slot, (r, buf)) in
                    params.into_iter().take(n_enc).zip(refs.iter().zip(&mut enc_buf))
                {
                    let (_, p) = slot;
                    let g = match grads.wrt(r.id) {
                        Some(t) => t.data(),
                        None => continue,
                    };
                    for i in 0..p.len() {
                        buf[i] = cfg.momentum * buf[i] + g[i];
                        p[i] -= lr * buf[i];
                    }
                }
            }
            let gw = grads.wrt(w_id).expect("w reaches the loss");
            let gb = grads.wrt(b_id).expect("b reaches the loss");
            for i in 0..clf.w.len() {
                vw[i] = cfg.momentum * vw[i] + gw.data()[i];
                clf.w[i] -= lr * vw[i];
            }
            for i in 0..clf.b.len() {
                vb[i] = cfg.momentum * vb[i] + gb.data()[i];
                clf.b[i] -= lr * vb[i];
            }
        }
    }
    Ok((tuned, clf))
}

/// Split, fit, measure. The model is read-only: fine-tuning works on a clone.
pub fn linear_probe(
    model: &TwinModel,
    dataset: &Dataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if dataset.sequences.is_empty() {
        return Err(Error::InvalidInput("cannot probe an empty dataset".into()));
    }
    let classes = class_index(dataset);
    let k = classes.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!("probe needs at least 2 classes, found {k}")));
    }
    let split = stratified_split(dataset, cfg, seed)?;
    let labels_of = |idxs: &[usize]| -> Vec<usize> {
        idxs.iter().map(|&i| classes[&dataset.sequences[i].class_id]).collect()
    };
    let labeled_y = labels_of(&split.labeled);
    let test_y = labels_of(&split.test);

    let (scoring_model, clf) = if cfg.finetune {
        let (tuned, clf) = finetune_encoder(model, dataset, &split, &labeled_y, k, cfg, seed)?;
        (tuned, clf)
    } else {
        let (train_x, d) = features_for(model, dataset, &split.labeled)?;
        let clf = train_softmax(&train_x, &labeled_y, d, k, cfg, seed)?;
        (model.clone(), clf)
    };
    let (test_x, _) = features_for(&scoring_model, dataset, &split.test)?;
    Ok(ProbeReport {
        accuracy: clf.accuracy(&test_x, &test_y),
        n_train: split.train.len(),
        n_labeled: split.labeled.len(),
        n_test: split.test.len(),
        label_fraction: cfg.label_fraction,
        finetune: cfg.finetune,
    })
}
