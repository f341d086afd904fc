//! Finite-difference validation of the differentiation engine.
//!
//! Every primitive (and the composites the trainer actually relies on) is
//! checked against central differences under a random covector, seed by
//! seed. Inputs are sampled away from kinks — relu at 0, coincident points,
//! the ball-clamp boundary — because a two-sided difference straddling a
//! kink measures nothing.

use crate::diff::{NodeId, Tape, Tensor};
use crate::error::Result;
use crate::geometry::Curvature;
use crate::streams::{domain, stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEEDS: usize = 20;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of checking one scenario across all seeds.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: (f(x+δeᵢ) − f(x−δeᵢ)) / 2δ.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut plus = x.data().to_vec();
        plus[i] += step;
        let mut minus = x.data().to_vec();
        minus[i] -= step;
        let fp = f(&Tensor::new(x.shape().to_vec(), plus)?)?;
        let fm = f(&Tensor::new(x.shape().to_vec(), minus)?)?;
        *g = (fp - fm) / (2.0 * step);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type Builder = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>>;

struct Scenario {
    name: &'static str,
    sample: Sampler,
    build: Builder,
    /// Leaf indices expected to receive *no* gradient (stop-grad subtrees).
    frozen: Vec<usize>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn run_scenario(s: &Scenario, index: u64, seeds: usize, step: f64, tol: f64) -> Result<CheckReport> {
    let mut max_rel: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = stream(seed as u64, domain::GRADCHECK, index, 0);
        let leaves = (s.sample)(&mut rng);

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = (s.build)(&mut tape, &ids)?;
        let grads = tape.backward(loss)?;

        for (j, leaf) in leaves.iter().enumerate() {
            if s.frozen.contains(&j) {
                assert!(
                    grads.wrt(ids[j]).is_none(),
                    "{}: leaf {j} is behind stop_grad yet received a gradient",
                    s.name
                );
                continue;
            }
            let analytic = grads
                .wrt(ids[j])
                .unwrap_or_else(|| panic!("{}: leaf {j} received no gradient", s.name))
                .data()
                .to_vec();
            let fd = finite_difference_gradient(
                |t| {
                    let mut tape = Tape::new();
                    let ids2: Vec<NodeId> = leaves
                        .iter()
                        .enumerate()
                        .map(|(k, lt)| tape.leaf(if k == j { t.clone() } else { lt.clone() }))
                        .collect();
                    let loss = (s.build)(&mut tape, &ids2)?;
                    tape.value(loss).item()
                },
                leaf,
                step,
            )?;
            let diff: Vec<f64> = analytic.iter().zip(fd.data()).map(|(a, b)| a - b).collect();
            let rel = l2(&diff) / l2(&analytic).max(l2(fd.data())).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(CheckReport { name: s.name.to_string(), seeds, max_rel_err: max_rel, tolerance: tol })
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

/// Uniform magnitudes in [min_abs, max_abs] with random sign — keeps every
/// element a safe distance from a relu kink.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>, min_abs: f64, max_abs: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(min_abs..max_abs);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

/// Rows rescaled to norms drawn from [lo, hi].
fn rows_with_norm(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cur = l2(&row).max(1e-9);
        let target = rng.gen_range(lo..hi);
        data.extend(row.iter().map(|x| x * target / cur));
    }
    Tensor::new(vec![n, d], data).expect("shape/data agree by construction")
}

/// Interior ball points with pairwise row separation ≥ `min_gap` between
/// the two returned tensors, so the distance gradient is well-defined and
/// smooth around them.
fn separated_ball_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, min_gap: f64) -> (Tensor, Tensor) {
    loop {
        let a = rows_with_norm(rng, n, d, 0.05, 0.85);
        let b = rows_with_norm(rng, n, d, 0.05, 0.85);
        let ok = (0..n).all(|i| {
            let ra = &a.data()[i * d..(i + 1) * d];
            let rb = &b.data()[i * d..(i + 1) * d];
            let gap: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            gap >= min_gap
        });
        if ok {
            return (a, b);
        }
    }
}

fn covector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn scenarios() -> Vec<Scenario> {
    let mut list = Vec::new();

    list.push(Scenario {
        name: "weighted_sum",
        sample: Box::new(|rng| vec![uniform(rng, vec![7], -1.0, 1.0)]),
        build: Box::new(|tape, ids| {
            // Deterministic non-uniform weights; the op under test IS the
            // scalarizer here, so it gets fixed weights instead.
            let w: Vec<f64> = (0..7).map(|i| 0.3 + 0.17 * i as f64).collect();
            tape.weighted_sum(ids[0], &w)
        }),
        frozen: vec![],
    });

    list.push(Scenario {
        name: "add_broadcast",
        sample: Box::new(|rng| {
            let w = covector(rng, 12);
            let mut v = vec![uniform(rng, vec![3, 4], -1.0, 1.0), uniform(rng, vec![4], -1.0, 1.0)];
            v.push(Tensor::new(vec![12], w).unwrap());
            v
        }),
        build: Box::new(|tape, ids| {
            let y = tape.add(ids[0], ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "scale",
        sample: Box::new(|rng| vec![uniform(rng, vec![2, 5], -1.0, 1.0), Tensor::new(vec![10], covector(rng, 10)).unwrap()]),
        build: Box::new(|tape, ids| {
            let y = tape.scale(ids[0], -1.7)?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "matmul",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![3, 4], -1.0, 1.0),
                uniform(rng, vec![4, 2], -1.0, 1.0),
                Tensor::new(vec![6], covector(rng, 6)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "relu",
        sample: Box::new(|rng| {
            vec![
                signed_away_from_zero(rng, vec![4, 5], 0.1, 1.0),
                Tensor::new(vec![20], covector(rng, 20)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.relu(ids[0])?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "tanh",
        sample: Box::new(|rng| {
            vec![uniform(rng, vec![4, 5], -2.0, 2.0), Tensor::new(vec![20], covector(rng, 20)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.tanh(ids[0])?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "concat_axis1",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![2, 3], -1.0, 1.0),
                uniform(rng, vec![2, 2], -1.0, 1.0),
                Tensor::new(vec![10], covector(rng, 10)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.concat(ids[0], ids[1], 1)?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "concat_axis0",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![1, 4], -1.0, 1.0),
                uniform(rng, vec![3, 4], -1.0, 1.0),
                Tensor::new(vec![16], covector(rng, 16)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.concat(ids[0], ids[1], 0)?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "reshape",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![2, 6], -1.0, 1.0),
                uniform(rng, vec![4, 3], -1.0, 1.0),
                Tensor::new(vec![9], covector(rng, 9)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let r = tape.reshape(ids[0], vec![3, 4])?;
            let y = tape.matmul(r, ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "sum_axis",
        sample: Box::new(|rng| {
            vec![uniform(rng, vec![3, 4, 2], -1.0, 1.0), Tensor::new(vec![6], covector(rng, 6)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.sum_axis(ids[0], 1)?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "mean_axis",
        sample: Box::new(|rng| {
            vec![uniform(rng, vec![3, 4, 2], -1.0, 1.0), Tensor::new(vec![12], covector(rng, 12)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.mean_axis(ids[0], 2)?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "temporal_conv",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![2, 3, 6, 4], -1.0, 1.0),
                uniform(rng, vec![2, 3, 3], -1.0, 1.0),
                uniform(rng, vec![2], -1.0, 1.0),
                Tensor::new(vec![96], covector(rng, 96)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.temporal_conv(ids[0], ids[1], ids[2])?;
            let w = tape.value(ids[3]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![3],
    });

    list.push(Scenario {
        name: "neighbor_agg",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![2, 2, 3, 5], -1.0, 1.0),
                uniform(rng, vec![5, 5], -1.0, 1.0),
                Tensor::new(vec![60], covector(rng, 60)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.neighbor_agg(ids[0], ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "channel_mix",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![2, 3, 4, 2], -1.0, 1.0),
                uniform(rng, vec![4, 3], -1.0, 1.0),
                uniform(rng, vec![4], -1.0, 1.0),
                Tensor::new(vec![64], covector(rng, 64)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.channel_mix(ids[0], ids[1], ids[2])?;
            let w = tape.value(ids[3]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![3],
    });

    list.push(Scenario {
        name: "l2_norm_rows",
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 5, 4, 0.3, 2.0), Tensor::new(vec![5], covector(rng, 5)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.l2_norm_rows(ids[0])?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "exp_map0_interior",
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 6, 4, 0.05, 2.5), Tensor::new(vec![24], covector(rng, 24)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.exp_map0(ids[0], Curvature::default())?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "exp_map0_wide_ball",
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 6, 4, 0.1, 4.0), Tensor::new(vec![24], covector(rng, 24)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.exp_map0(ids[0], Curvature::new(0.25).expect("0.25 is a valid curvature"))?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "exp_map0_clamped",
        // Norms ≥ 8 put tanh well past the clamp on both FD sides; the map
        // is smooth (purely tangential) throughout that regime.
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 4, 3, 8.0, 12.0), Tensor::new(vec![12], covector(rng, 12)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.exp_map0(ids[0], Curvature::default())?;
            let w = tape.value(ids[1]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "poincare_loss_rows",
        sample: Box::new(|rng| {
            let (h, t) = separated_ball_rows(rng, 5, 4, 0.05);
            vec![h, t, Tensor::new(vec![5], covector(rng, 5)).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.poincare_loss(ids[0], ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "cosine_loss_rows",
        sample: Box::new(|rng| {
            vec![
                rows_with_norm(rng, 5, 4, 0.3, 1.5),
                rows_with_norm(rng, 5, 4, 0.3, 1.5),
                Tensor::new(vec![5], covector(rng, 5)).unwrap(),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.cosine_loss(ids[0], ids[1])?;
            let w = tape.value(ids[2]).data().to_vec();
            tape.weighted_sum(y, &w)
        }),
        frozen: vec![2],
    });

    list.push(Scenario {
        name: "softmax_cross_entropy",
        sample: Box::new(|rng| {
            let labels: Vec<f64> = (0..6).map(|_| rng.gen_range(0..5) as f64).collect();
            vec![uniform(rng, vec![6, 5], -2.0, 2.0), Tensor::new(vec![6], labels).unwrap()]
        }),
        build: Box::new(|tape, ids| {
            let labels: Vec<usize> = tape.value(ids[1]).data().iter().map(|x| *x as usize).collect();
            tape.softmax_cross_entropy(ids[0], &labels)
        }),
        frozen: vec![1],
    });

    list.push(Scenario {
        name: "infonce",
        sample: Box::new(|rng| {
            vec![
                rows_with_norm(rng, 4, 6, 0.3, 1.5),
                rows_with_norm(rng, 4, 6, 0.3, 1.5),
                rows_with_norm(rng, 5, 6, 1.0, 1.0 + 1e-9),
            ]
        }),
        build: Box::new(|tape, ids| {
            let negs = tape.stop_grad(ids[2]);
            tape.infonce(ids[0], ids[1], negs, 0.2)
        }),
        frozen: vec![2],
    });

    // The gradient that actually trains the online branch: distance to a
    // stop-gradient target, both through the origin map.
    list.push(Scenario {
        name: "composite_poincare_expmap_stopgrad",
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 4, 6, 0.1, 2.0), rows_with_norm(rng, 4, 6, 0.1, 2.0)]
        }),
        build: Box::new(|tape, ids| {
            let h = tape.exp_map0(ids[0], Curvature::default())?;
            let t = tape.exp_map0(ids[1], Curvature::default())?;
            let t = tape.stop_grad(t);
            let rows = tape.poincare_loss(h, t)?;
            tape.mean_axis(rows, 0)
        }),
        frozen: vec![1],
    });

    // Same but with the full curriculum combination of both distances.
    list.push(Scenario {
        name: "composite_curriculum_blend",
        sample: Box::new(|rng| {
            vec![rows_with_norm(rng, 4, 6, 0.1, 2.0), rows_with_norm(rng, 4, 6, 0.1, 2.0)]
        }),
        build: Box::new(|tape, ids| {
            let alpha = 0.37;
            let h = tape.exp_map0(ids[0], Curvature::default())?;
            let t = tape.exp_map0(ids[1], Curvature::default())?;
            let t = tape.stop_grad(t);
            let poin = tape.poincare_loss(h, t)?;
            let cos = tape.cosine_loss(h, t)?;
            let poin = tape.scale(poin, alpha)?;
            let cos = tape.scale(cos, 1.0 - alpha)?;
            let both = tape.add(poin, cos)?;
            tape.mean_axis(both, 0)
        }),
        frozen: vec![1],
    });

    // A two-layer head into the map into the distance — the deepest chain
    // the trainer differentiates, with tanh standing in for relu to keep
    // the function smooth at every sampled point.
    list.push(Scenario {
        name: "composite_head_chain",
        sample: Box::new(|rng| {
            vec![
                uniform(rng, vec![4, 6], -1.0, 1.0),
                uniform(rng, vec![6, 8], -0.5, 0.5),
                uniform(rng, vec![8], -0.5, 0.5),
                uniform(rng, vec![8, 6], -0.5, 0.5),
                uniform(rng, vec![6], -0.5, 0.5),
                rows_with_norm(rng, 4, 6, 0.1, 1.5),
            ]
        }),
        build: Box::new(|tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            let y = tape.add(y, ids[2])?;
            let y = tape.tanh(y)?;
            let y = tape.matmul(y, ids[3])?;
            let y = tape.add(y, ids[4])?;
            let h = tape.exp_map0(y, Curvature::default())?;
            let t = tape.exp_map0(ids[5], Curvature::default())?;
            let t = tape.stop_grad(t);
            let rows = tape.poincare_loss(h, t)?;
            tape.mean_axis(rows, 0)
        }),
        frozen: vec![5],
    });

    list
}

/// Checks every scenario across `seeds` seeds and reports the worst
/// relative error per scenario.
pub fn run_all(seeds: usize) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (i, s) in scenarios().iter().enumerate() {
        reports.push(run_scenario(s, i as u64, seeds, DEFAULT_STEP, DEFAULT_TOLERANCE)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_oracle_is_exact_on_quadratics() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let grad = finite_difference_gradient(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((grad.data()[0] - 2.0).abs() < 1e-8);
        assert!((grad.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn fd_oracle_is_step_insensitive_on_smooth_functions() {
        // Self-consistency: two very different steps agree closely, so the
        // estimate reflects the function, not the step choice.
        let x = Tensor::new(vec![3], vec![0.4, -0.2, 0.7]).unwrap();
        let f = |t: &Tensor| -> Result<f64> {
            let s: f64 = t.data().iter().map(|v| (v * 1.3).tanh()).sum();
            Ok(s.exp())
        };
        let g4 = finite_difference_gradient(f, &x, 1e-4).unwrap();
        let g6 = finite_difference_gradient(f, &x, 1e-6).unwrap();
        for (a, b) in g4.data().iter().zip(g6.data()) {
            assert!((a - b).abs() / a.abs().max(1e-9) < 1e-3, "{a} vs {b}");
        }
    }

    /// The mandatory suite: every primitive and the training composites,
    /// 20 seeds each, against central differences.
    #[test]
    fn all_primitives_match_finite_differences() {
        let reports = run_all(DEFAULT_SEEDS).unwrap();
        assert!(!reports.is_empty());
        for r in &reports {
            assert!(
                r.passed(),
                "{}: max relative error {:e} over {} seeds exceeds {:e}",
                r.name,
                r.max_rel_err,
                r.seeds,
                r.tolerance
            );
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run_all(3).unwrap();
        let b = run_all(3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits());
        }
    }
}
