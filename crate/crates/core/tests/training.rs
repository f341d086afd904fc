//! Curriculum dynamics on the desk preset with a rim-start initialization:
//! during the angle-only phase the embeddings ride the ball edge while the
//! angular loss falls; once the blend window opens, the radius term pulls
//! them off the edge and `1 - ‖h‖²` climbs.

use hysp_lab::trainer::{pretrain, LabConfig};

/// Exact rank correlation; inputs are short and tie-free in practice, ties
/// get average ranks so the result stays in [-1, 1] regardless.
fn spearman(xs: &[f64]) -> f64 {
    let n = xs.len();
    let rank = |vals: Vec<f64>| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let rx = rank((0..n).map(|i| i as f64).collect());
    let ry = rank(xs.to_vec());
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean) * (rx[i] - mean);
        dy += (ry[i] - mean) * (ry[i] - mean);
    }
    num / (dx * dy).sqrt()
}

#[test]
fn rim_start_rides_the_edge_then_departs_when_the_radius_term_engages() {
    let mut cfg = LabConfig::desk();
    cfg.model.boundary_init_scale = 3.0;
    let ds = cfg.data.generate(cfg.seed).unwrap();
    let (_, metrics) = pretrain(&cfg, &ds, None).unwrap();

    let (e1, e2) = (cfg.train.curriculum_start, cfg.train.curriculum_end);
    let spread: Vec<f64> =
        metrics.iter().map(|r| 1.0 - r.mean_h_norm * r.mean_h_norm).collect();
    assert!(metrics.iter().all(|r| r.mean_loss.is_finite() && r.mean_h_norm.is_finite()));

    // Angle phase: embeddings stay at the edge, the angular loss drops hard.
    let early_max = spread[..e1].iter().fold(0.0f64, |a, &b| a.max(b));
    assert!(early_max < 0.2, "left the edge during the angle phase: {early_max}");
    assert!(spread[e1 - 1] < 5e-3, "not at the edge when the blend opened: {}", spread[e1 - 1]);
    assert!(
        metrics[e1].mean_loss < 0.25 * metrics[0].mean_loss,
        "angle loss did not fall: {} -> {}",
        metrics[0].mean_loss,
        metrics[e1].mean_loss
    );

    // Blend window: 1 - ‖h‖² rises from ≈0 as the radius term engages.
    let s = spearman(&spread[e1..e2.min(spread.len())]);
    assert!(s > 0.0, "no departure trend across the blend window: spearman {s}");

    // The departure sticks: every epoch past the window stays farther from
    // the edge than anything seen while the angle phase held it there.
    let late_min = spread[e2..].iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(
        late_min > early_max,
        "fell back to the edge after the window: {late_min} vs {early_max}"
    );
}
