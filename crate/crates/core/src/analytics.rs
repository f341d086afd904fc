//! Uncertainty analytics: per-sample embedding radii, view-averaged
//! positive-pair statistics, histograms against uncertainty, per-class
//! radius rankings, and report artifacts (CSV + self-contained SVG).
//!
//! Everything here is read-only over a checkpoint and deterministic in the
//! seed: emitting the same report twice gives byte-identical files.

use crate::data::{make_view_pair, skeleton, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{norm, riemannian_grad_poincare, PoincarePoint};
use crate::model::{batch_tensor, encoder_features, hyperbolic_embeddings, Branch, TwinModel};
use crate::objectives::cosine_loss;
use crate::streams::{domain, stream};
use crate::trainer::{train_softmax, Checkpoint, LabConfig, ProbeConfig};
use rand::Rng;
use std::path::Path;

const CHUNK: usize = 64;

/// One sample's uncertainty profile under a trained model.
#[derive(Debug, Clone)]
pub struct UncertaintyRecord {
    pub sample_id: usize,
    pub class_id: usize,
    /// Embedding radius ‖h‖ of the raw (unaugmented) sample.
    pub radius: f64,
    /// Exactly 1 − radius.
    pub uncertainty: f64,
    /// Positive-pair cosine distance, averaged over fresh view pairs.
    pub cosine_distance: f64,
    /// Riemannian gradient norm of the pair distance, same averaging.
    pub grad_norm: f64,
}

fn embed_rows(model: &TwinModel, seqs: &[crate::data::SkeletonSequence], branch: Branch) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(CHUNK) {
        let x = batch_tensor(chunk)?;
        let h = hyperbolic_embeddings(model, &x, branch)?;
        let d = h.shape()[1];
        for i in 0..chunk.len() {
            rows.push(h.data()[i * d..(i + 1) * d].to_vec());
        }
    }
    Ok(rows)
}

/// Radii, cosine distances and gradient norms for every sample in dataset
/// order. Radii come from the raw sample on the target branch (the online
/// branch behind `analytics.online_branch`); pair statistics average over
/// `analytics.n_views` freshly drawn view pairs.
pub fn collect_records(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    cfg: &LabConfig,
) -> Result<Vec<UncertaintyRecord>> {
    cfg.analytics.validate()?;
    if dataset.sequences.is_empty() {
        return Err(Error::InvalidInput("cannot analyze an empty dataset".into()));
    }
    let model = &ckpt.model;
    let c = model.curvature();
    let branch = if cfg.analytics.online_branch { Branch::Online } else { Branch::Target };

    let raw_rows = embed_rows(model, &dataset.sequences, branch)?;
    let n = dataset.sequences.len();
    let mut sum_cos = vec![0.0; n];
    let mut sum_grad = vec![0.0; n];

    // A dedicated sub-seed keeps analytics views out of the training
    // augmentation streams without a separate pair-drawing code path.
    let view_seed: u64 = stream(cfg.seed, domain::ANALYTICS, 0, 0).gen();
    for view in 0..cfg.analytics.n_views {
        let mut online = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for s in &dataset.sequences {
            let (on, tg) = make_view_pair(s, &cfg.data.augment, &skeleton::MIRROR, view_seed, view);
            online.push(on);
            target.push(tg);
        }
        let on_rows = embed_rows(model, &online, Branch::Online)?;
        let tg_rows = embed_rows(model, &target, Branch::Target)?;
        for i in 0..n {
            sum_cos[i] += cosine_loss(&on_rows[i], &tg_rows[i])?;
            let hp = PoincarePoint::new(on_rows[i].clone(), c)?;
            let tp = PoincarePoint::new(tg_rows[i].clone(), c)?;
            let g = riemannian_grad_poincare(&hp, &tp)?;
            sum_grad[i] += norm(&g.grad);
        }
    }

    let views = cfg.analytics.n_views as f64;
    Ok((0..n)
        .map(|i| {
            let s = &dataset.sequences[i];
            let radius = norm(&raw_rows[i]);
            UncertaintyRecord {
                sample_id: s.sample_id,
                class_id: s.class_id,
                radius,
                uncertainty: 1.0 - radius,
                cosine_distance: sum_cos[i] / views,
                grad_norm: sum_grad[i] / views,
            }
        })
        .collect())
}

/// Which per-view statistic a histogram aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistQuantity {
    CosineDistance,
    GradNorm,
}

impl HistQuantity {
    pub fn name(self) -> &'static str {
        match self {
            HistQuantity::CosineDistance => "cosine_distance",
            HistQuantity::GradNorm => "grad_norm",
        }
    }

    fn of(self, r: &UncertaintyRecord) -> f64 {
        match self {
            HistQuantity::CosineDistance => r.cosine_distance,
            HistQuantity::GradNorm => r.grad_norm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean uncertainty of members; 0 and flagged when the bin is empty.
    pub mean_uncertainty: f64,
    pub mean_quantity: f64,
    pub empty: bool,
}

#[derive(Debug, Clone)]
pub struct Histogram {
    pub quantity: HistQuantity,
    pub bins: Vec<HistogramBin>,
}

/// Equal-width bins over the observed uncertainty range; each bin reports
/// the mean uncertainty and mean quantity of its members. Empty bins are
/// flagged, never interpolated. The top edge is inclusive.
pub fn uncertainty_histogram(
    records: &[UncertaintyRecord],
    quantity: HistQuantity,
    n_bins: usize,
) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 bins, got {n_bins}")));
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot bin zero records".into()));
    }
    let lo = records.iter().map(|r| r.uncertainty).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.uncertainty).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let mut sums_u = vec![0.0; n_bins];
    let mut sums_q = vec![0.0; n_bins];
    for r in records {
        let b = if width == 0.0 {
            0
        } else {
            (((r.uncertainty - lo) / width) as usize).min(n_bins - 1)
        };
        counts[b] += 1;
        sums_u[b] += r.uncertainty;
        sums_q[b] += quantity.of(r);
    }
    let bins = (0..n_bins)
        .map(|b| {
            let empty = counts[b] == 0;
            let denom = counts[b].max(1) as f64;
            HistogramBin {
                lo: lo + width * b as f64,
                hi: if b + 1 == n_bins { hi } else { lo + width * (b + 1) as f64 },
                count: counts[b],
                mean_uncertainty: if empty { 0.0 } else { sums_u[b] / denom },
                mean_quantity: if empty { 0.0 } else { sums_q[b] / denom },
                empty,
            }
        })
        .collect();
    Ok(Histogram { quantity, bins })
}

/// Spearman rank correlation with average ranks for ties. Errors on fewer
/// than two points or a constant side, where the coefficient is undefined.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "spearman needs two equal-length series of >= 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) || ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("spearman requires finite values".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let (dx, dy) = (rx[i] - mean, ry[i] - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("spearman is undefined for a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman over the non-empty bins: mean uncertainty vs mean quantity.
pub fn histogram_spearman(hist: &Histogram) -> Result<f64> {
    let xs: Vec<f64> = hist.bins.iter().filter(|b| !b.empty).map(|b| b.mean_uncertainty).collect();
    let ys: Vec<f64> = hist.bins.iter().filter(|b| !b.empty).map(|b| b.mean_quantity).collect();
    spearman(&xs, &ys)
}

/// Per-class median radius, most confident class first.
pub fn class_radius_ranking(records: &[UncertaintyRecord]) -> Vec<(usize, f64)> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for r in records {
        by_class.entry(r.class_id).or_default().push(r.radius);
    }
    let mut ranking: Vec<(usize, f64)> = by_class
        .into_iter()
        .map(|(class, mut radii)| {
            radii.sort_by(f64::total_cmp);
            let m = radii.len();
            let median = if m % 2 == 1 {
                radii[m / 2]
            } else {
                0.5 * (radii[m / 2 - 1] + radii[m / 2])
            };
            (class, median)
        })
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranking
}

/// A confusion matrix whose rows and columns follow the descending
/// median-radius order of `class_radius_ranking`.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    /// Class ids in row/column order.
    pub classes: Vec<usize>,
    /// Row-major `K × K`; rows are true classes, columns predictions.
    pub counts: Vec<usize>,
}

pub fn sorted_confusion_matrix(
    records: &[UncertaintyRecord],
    predicted: &[usize],
) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot build a confusion matrix from zero records".into()));
    }
    if predicted.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} records",
            predicted.len(),
            records.len()
        )));
    }
    let classes: Vec<usize> = class_radius_ranking(records).into_iter().map(|(c, _)| c).collect();
    let pos = |class: usize| -> Result<usize> {
        classes.iter().position(|&c| c == class).ok_or_else(|| {
            Error::InvalidInput(format!("class {class} does not appear in the records"))
        })
    };
    let k = classes.len();
    let mut counts = vec![0usize; k * k];
    for (r, &p) in records.iter().zip(predicted) {
        counts[pos(r.class_id)? * k + pos(p)?] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Predictions for every record from a softmax head fitted on the whole
/// dataset's frozen features — a descriptive artifact, not an evaluation.
pub fn dataset_predictions(
    model: &TwinModel,
    dataset: &Dataset,
    probe_cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut classes: Vec<usize> = dataset.sequences.iter().map(|s| s.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 classes for predictions".into()));
    }
    let mut features = Vec::new();
    let mut d = 0;
    for chunk in dataset.sequences.chunks(CHUNK) {
        let x = batch_tensor(chunk)?;
        let f = encoder_features(model, &x, Branch::Online)?;
        d = f.shape()[1];
        features.extend_from_slice(f.data());
    }
    let labels: Vec<usize> = dataset
        .sequences
        .iter()
        .map(|s| classes.iter().position(|&c| c == s.class_id).unwrap())
        .collect();
    let clf = train_softmax(&features, &labels, d, classes.len(), probe_cfg, seed)?;
    Ok((0..labels.len())
        .map(|i| classes[clf.predict(&features[i * d..(i + 1) * d])])
        .collect())
}

// ---------------------------------------------------------------- artifacts

fn records_csv(records: &[UncertaintyRecord]) -> String {
    let mut out = String::from("sample_id,class_id,radius,uncertainty,cosine_distance,grad_norm\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sample_id, r.class_id, r.radius, r.uncertainty, r.cosine_distance, r.grad_norm
        ));
    }
    out
}

fn histogram_csv(hist: &Histogram) -> String {
    let mut out = String::from("bin,lo,hi,count,mean_uncertainty,mean_quantity,empty\n");
    for (i, b) in hist.bins.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i, b.lo, b.hi, b.count, b.mean_uncertainty, b.mean_quantity, b.empty
        ));
    }
    out
}

fn ranking_csv(ranking: &[(usize, f64)]) -> String {
    let mut out = String::from("class_id,median_radius\n");
    for (c, m) in ranking {
        out.push_str(&format!("{c},{m}\n"));
    }
    out
}

fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let k = cm.classes.len();
    let mut out = String::from("true_class");
    for c in &cm.classes {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for (i, c) in cm.classes.iter().enumerate() {
        out.push_str(&c.to_string());
        for j in 0..k {
            out.push_str(&format!(",{}", cm.counts[i * k + j]));
        }
        out.push('\n');
    }
    out
}

/// A self-contained bar chart of mean quantity per uncertainty bin. All
/// geometry is derived from the histogram alone, so equal histograms give
/// byte-equal files. Empty bins show a baseline marker instead of a bar;
/// a histogram with no occupied bins renders a "no data" placeholder.
fn histogram_svg(hist: &Histogram, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 70.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 50.0;
    const MB: f64 = 60.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    ));

    let occupied: Vec<&HistogramBin> = hist.bins.iter().filter(|b| !b.empty).collect();
    if occupied.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"14\" fill=\"#888\">no data</text>\n",
            W / 2.0,
            H / 2.0
        ));
        svg.push_str("</svg>\n");
        return svg;
    }

    let y_max = occupied.iter().map(|b| b.mean_quantity).fold(f64::NEG_INFINITY, f64::max);
    let y_min = occupied.iter().map(|b| b.mean_quantity).fold(f64::INFINITY, f64::min).min(0.0);
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let n = hist.bins.len() as f64;
    let bar_w = plot_w / n;
    let y_of = |v: f64| MT + plot_h - (v - y_min) / y_span * plot_h;

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        MT + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MT + plot_h,
        ML + plot_w,
        MT + plot_h
    ));
    for (i, b) in hist.bins.iter().enumerate() {
        let x = ML + bar_w * i as f64;
        if b.empty {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"none\" stroke=\"#aaa\"/>\n",
                x + bar_w / 2.0,
                MT + plot_h
            ));
            continue;
        }
        let top = y_of(b.mean_quantity);
        let base = y_of(0.0f64.max(y_min));
        let (y, h) = if top <= base { (top, base - top) } else { (base, top - base) };
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"#4878a8\" stroke=\"white\"/>\n",
            x + 1.0,
            bar_w - 2.0
        ));
    }
    // Edge labels: uncertainty range and quantity peak.
    svg.push_str(&format!(
        "<text x=\"{ML}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
        MT + plot_h + 18.0,
        hist.bins[0].lo
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
        ML + plot_w,
        MT + plot_h + 18.0,
        hist.bins[hist.bins.len() - 1].hi
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">{y_max}</text>\n",
        ML - 6.0,
        MT + 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">uncertainty</text>\n",
        ML + plot_w / 2.0,
        H - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">mean {}</text>\n",
        MT + plot_h / 2.0,
        MT + plot_h / 2.0,
        hist.quantity.name()
    ));
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub path: String,
    pub kind: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReportIndex {
    pub artifacts: Vec<ArtifactEntry>,
}

/// Write the full analytics report into `out_dir`: the raw records, both
/// histograms as CSV + SVG, the class ranking, optionally a confusion
/// matrix, and an index of everything written.
pub fn emit_report(
    out_dir: &Path,
    records: &[UncertaintyRecord],
    n_bins: usize,
    confusion: Option<&ConfusionMatrix>,
) -> Result<ReportIndex> {
    std::fs::create_dir_all(out_dir)?;
    let mut index = ReportIndex { artifacts: Vec::new() };
    let put = |index: &mut ReportIndex, name: &str, file: &str, kind: &str, body: String| -> Result<()> {
        std::fs::write(out_dir.join(file), body)?;
        index.artifacts.push(ArtifactEntry {
            name: name.into(),
            path: file.into(),
            kind: kind.into(),
        });
        Ok(())
    };

    put(&mut index, "records", "records.csv", "csv", records_csv(records))?;
    for quantity in [HistQuantity::CosineDistance, HistQuantity::GradNorm] {
        let hist = uncertainty_histogram(records, quantity, n_bins)?;
        let stem = format!("uncertainty_vs_{}", quantity.name());
        put(&mut index, &stem, &format!("{stem}.csv"), "csv", histogram_csv(&hist))?;
        let title = format!("mean {} per uncertainty bin", quantity.name());
        put(&mut index, &stem, &format!("{stem}.svg"), "svg", histogram_svg(&hist, &title))?;
    }
    put(
        &mut index,
        "class_radii",
        "class_radii.csv",
        "csv",
        ranking_csv(&class_radius_ranking(records)),
    )?;
    if let Some(cm) = confusion {
        put(&mut index, "confusion", "confusion.csv", "csv", confusion_csv(cm))?;
    }
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(out_dir.join("index.json"), json)?;
    Ok(index)
}
