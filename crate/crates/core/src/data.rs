//! Synthetic skeleton sequences and the augmentation pipelines that feed the
//! twin networks.
//!
//! A sequence is a dense `(3, T, V)` block of joint coordinates. Classes are
//! parametric motion generators: a shared base pose plus sinusoidal motion on
//! a per-class subset of joints, with per-class random motion directions and
//! per-sample phase, actor scale and measurement noise. Every coordinate is
//! rounded through `f32` at generation time so the on-disk cache (which stores
//! 32-bit floats) round-trips bit-identically.

use rand::Rng;

use crate::error::{Error, Result};
use crate::streams::{domain, gauss, stream};

/// The fixed 8-joint desk skeleton: indices, bone list, left/right mirror map
/// and the rest pose everything else is built from.
pub mod skeleton {
    pub const V: usize = 8;

    pub const JOINT_NAMES: [&str; V] = [
        "head", "neck", "spine", "pelvis", "l_hand", "r_hand", "l_foot", "r_foot",
    ];

    /// Undirected bones (parent, child).
    pub const EDGES: [(usize, usize); 7] = [(0, 1), (1, 2), (2, 3), (1, 4), (1, 5), (3, 6), (3, 7)];

    /// `MIRROR[j]` is the joint `j` maps to under a left/right flip.
    pub const MIRROR: [usize; V] = [0, 1, 2, 3, 5, 4, 7, 6];

    /// Rest pose, one `[x, y, z]` per joint. +x is the subject's left.
    pub fn base_pose() -> Vec<[f64; 3]> {
        vec![
            [0.0, 1.0, 0.0],    // head
            [0.0, 0.7, 0.0],    // neck
            [0.0, 0.4, 0.0],    // spine
            [0.0, 0.0, 0.0],    // pelvis
            [0.45, 0.45, 0.0],  // l_hand
            [-0.45, 0.45, 0.0], // r_hand
            [0.2, -0.9, 0.0],   // l_foot
            [-0.2, -0.9, 0.0],  // r_foot
        ]
    }
}

/// One motion clip: coordinates laid out as `(3, T, V)`, flat index
/// `(c * t + frame) * v + joint`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub coords: Vec<f64>,
    pub t: usize,
    pub v: usize,
    pub class_id: usize,
    pub sample_id: usize,
    pub actor_scale: f64,
}

impl SkeletonSequence {
    pub fn new(
        coords: Vec<f64>,
        t: usize,
        v: usize,
        class_id: usize,
        sample_id: usize,
        actor_scale: f64,
    ) -> Result<Self> {
        if t < 2 {
            return Err(Error::InvalidInput(format!(
                "sequence needs at least 2 frames, got {t}"
            )));
        }
        if v == 0 {
            return Err(Error::InvalidInput("sequence needs at least one joint".into()));
        }
        if coords.len() != 3 * t * v {
            return Err(Error::Shape(format!(
                "coords len {} does not match (3, {t}, {v})",
                coords.len()
            )));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("sequence coordinates".into()));
        }
        if !(actor_scale.is_finite() && actor_scale > 0.0) {
            return Err(Error::InvalidInput(format!("bad actor_scale {actor_scale}")));
        }
        Ok(Self { coords, t, v, class_id, sample_id, actor_scale })
    }

    #[inline]
    pub fn idx(&self, c: usize, frame: usize, joint: usize) -> usize {
        (c * self.t + frame) * self.v + joint
    }

    #[inline]
    pub fn at(&self, c: usize, frame: usize, joint: usize) -> f64 {
        self.coords[(c * self.t + frame) * self.v + joint]
    }
}

/// A parametric motion class. Motion directions are not stored here: they are
/// drawn per joint from the class's own stream so two classes with identical
/// amplitude still move differently.
#[derive(Debug, Clone)]
pub struct SyntheticClassSpec {
    pub class_id: usize,
    /// Rest pose, one `[x, y, z]` per joint.
    pub base_pose: Vec<[f64; 3]>,
    pub motion_amplitude: f64,
    /// Cycles over the whole clip (frequency is relative to clip length).
    pub motion_frequency: f64,
    pub moving_joint_mask: Vec<bool>,
    pub noise_sigma: f64,
}

impl SyntheticClassSpec {
    fn validate(&self) -> Result<()> {
        let v = self.base_pose.len();
        if v == 0 {
            return Err(Error::InvalidInput("class base pose is empty".into()));
        }
        if self.moving_joint_mask.len() != v {
            return Err(Error::Shape(format!(
                "class {}: mask len {} vs {} joints",
                self.class_id,
                self.moving_joint_mask.len(),
                v
            )));
        }
        if !self.base_pose.iter().flatten().all(|c| c.is_finite()) {
            return Err(Error::NonFinite(format!("class {} base pose", self.class_id)));
        }
        if !(self.motion_amplitude.is_finite() && self.motion_amplitude >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "class {}: amplitude must be finite and >= 0",
                self.class_id
            )));
        }
        if !(self.motion_frequency.is_finite() && self.motion_frequency > 0.0) {
            return Err(Error::InvalidInput(format!(
                "class {}: frequency must be finite and > 0",
                self.class_id
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "class {}: noise sigma must be finite and >= 0",
                self.class_id
            )));
        }
        if self.motion_amplitude > 0.0 && !self.moving_joint_mask.iter().any(|&m| m) {
            return Err(Error::InvalidInput(format!(
                "class {}: positive amplitude but no moving joints",
                self.class_id
            )));
        }
        Ok(())
    }
}

fn unit3(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [gauss(rng), gauss(rng), gauss(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[inline]
fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Generate `n_per_class` clips per class, `t` frames each. Deterministic in
/// `seed`: every sample owns a counter-keyed stream, so regeneration is
/// bit-identical no matter how the call is scheduled.
pub fn generate_dataset(
    specs: &[SyntheticClassSpec],
    n_per_class: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no class specs".into()));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be >= 1".into()));
    }
    if t < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 frames, got {t}")));
    }
    let v = specs[0].base_pose.len();
    let mut seen = std::collections::HashSet::new();
    for spec in specs {
        spec.validate()?;
        if spec.base_pose.len() != v {
            return Err(Error::Shape(format!(
                "class {} has {} joints, class {} has {v}",
                spec.class_id,
                spec.base_pose.len(),
                specs[0].class_id
            )));
        }
        if !seen.insert(spec.class_id) {
            return Err(Error::InvalidInput(format!("duplicate class id {}", spec.class_id)));
        }
    }

    let mut out = Vec::with_capacity(specs.len() * n_per_class);
    for (k, spec) in specs.iter().enumerate() {
        // Per-joint unit motion directions are a class property.
        let mut class_rng = stream(seed, domain::CLASS, spec.class_id as u64, 0);
        let dirs: Vec<[f64; 3]> = (0..v).map(|_| unit3(&mut class_rng)).collect();

        for i in 0..n_per_class {
            let sample_id = k * n_per_class + i;
            let mut rng = stream(seed, domain::DATASET, sample_id as u64, 0);
            let actor_scale = round_f32(rng.gen_range(0.8..1.2));
            let phase = std::f64::consts::TAU * rng.gen::<f64>();

            let mut coords = vec![0.0f64; 3 * t * v];
            for c in 0..3 {
                for frame in 0..t {
                    let time = frame as f64 / (t - 1) as f64;
                    let swing =
                        (std::f64::consts::TAU * spec.motion_frequency * time + phase).sin();
                    for joint in 0..v {
                        let motion = if spec.moving_joint_mask[joint] {
                            spec.motion_amplitude * swing * dirs[joint][c]
                        } else {
                            0.0
                        };
                        let noise = spec.noise_sigma * gauss(&mut rng);
                        coords[(c * t + frame) * v + joint] =
                            round_f32((spec.base_pose[joint][c] + motion + noise) * actor_scale);
                    }
                }
            }
            out.push(SkeletonSequence::new(
                coords,
                t,
                v,
                spec.class_id,
                sample_id,
                actor_scale,
            )?);
        }
    }
    Ok(out)
}

/// Linear interpolation along the frame axis. Endpoints map exactly onto the
/// original endpoints.
pub fn temporal_resize(x: &SkeletonSequence, t_out: usize) -> Result<SkeletonSequence> {
    if t_out < 2 {
        return Err(Error::InvalidInput(format!(
            "resize target must be >= 2 frames, got {t_out}"
        )));
    }
    if t_out == x.t {
        return Ok(x.clone());
    }
    let span = (x.t - 1) as f64;
    let denom = (t_out - 1) as f64;
    let mut coords = vec![0.0f64; 3 * t_out * x.v];
    for c in 0..3 {
        for frame in 0..t_out {
            if frame == t_out - 1 {
                for joint in 0..x.v {
                    coords[(c * t_out + frame) * x.v + joint] = x.at(c, x.t - 1, joint);
                }
                continue;
            }
            let pos = frame as f64 * span / denom;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            for joint in 0..x.v {
                let a = x.at(c, lo, joint);
                let b = x.at(c, lo + 1, joint);
                coords[(c * t_out + frame) * x.v + joint] = (1.0 - frac) * a + frac * b;
            }
        }
    }
    SkeletonSequence::new(coords, t_out, x.v, x.class_id, x.sample_id, x.actor_scale)
}

/// Knobs for both augmentation pipelines. Blur is parametrized by the side
/// weight `w` of the symmetric kernel `(w, 1 - 2w, w)`; the default 0.25 is
/// the classic binomial smoother.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub shear_range: f64,
    pub crop_ratio: [f64; 2],
    pub rotate_max_degrees: f64,
    pub axis_mask_prob: f64,
    pub spatial_flip_prob: f64,
    pub temporal_flip_prob: f64,
    pub noise_sigma: f64,
    pub blur_weight: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            shear_range: 0.5,
            crop_ratio: [0.5, 1.0],
            rotate_max_degrees: 30.0,
            axis_mask_prob: 0.3,
            spatial_flip_prob: 0.5,
            temporal_flip_prob: 0.5,
            noise_sigma: 0.01,
            blur_weight: 0.25,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| -> Result<()> {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
            Ok(())
        };
        if !(self.shear_range.is_finite() && self.shear_range >= 0.0) {
            return Err(Error::Config(format!("shear_range must be >= 0, got {}", self.shear_range)));
        }
        let [lo, hi] = self.crop_ratio;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop_ratio must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]")));
        }
        if !(self.rotate_max_degrees.is_finite() && self.rotate_max_degrees >= 0.0) {
            return Err(Error::Config(format!(
                "rotate_max_degrees must be >= 0, got {}",
                self.rotate_max_degrees
            )));
        }
        prob("axis_mask_prob", self.axis_mask_prob)?;
        prob("spatial_flip_prob", self.spatial_flip_prob)?;
        prob("temporal_flip_prob", self.temporal_flip_prob)?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.blur_weight.is_finite() && (0.0..=0.5).contains(&self.blur_weight)) {
            return Err(Error::Config(format!(
                "blur_weight must be in [0, 0.5], got {}",
                self.blur_weight
            )));
        }
        Ok(())
    }
}

fn draw_sym(rng: &mut impl Rng, s: f64) -> f64 {
    if s > 0.0 {
        rng.gen_range(-s..s)
    } else {
        0.0
    }
}

fn draw_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// `out_c = sum_k m[c][k] * in_k` applied to every (frame, joint).
fn apply_linear(x: &mut SkeletonSequence, m: &[[f64; 3]; 3]) {
    let (t, v) = (x.t, x.v);
    for frame in 0..t {
        for joint in 0..v {
            let p = [x.at(0, frame, joint), x.at(1, frame, joint), x.at(2, frame, joint)];
            for c in 0..3 {
                x.coords[(c * t + frame) * v + joint] =
                    m[c][0] * p[0] + m[c][1] * p[1] + m[c][2] * p[2];
            }
        }
    }
}

/// Identity plus off-diagonal entries drawn in the fixed order
/// xy, xz, yx, yz, zx, zy.
fn draw_shear(rng: &mut impl Rng, s: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (c, row) in m.iter_mut().enumerate() {
        row[c] = 1.0;
    }
    m[0][1] = draw_sym(rng, s);
    m[0][2] = draw_sym(rng, s);
    m[1][0] = draw_sym(rng, s);
    m[1][2] = draw_sym(rng, s);
    m[2][0] = draw_sym(rng, s);
    m[2][1] = draw_sym(rng, s);
    m
}

fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, co) = angle.sin_cos();
    let one_c = 1.0 - co;
    let [kx, ky, kz] = axis;
    // R = I + sin * K + (1 - cos) * K^2 with K the cross-product matrix.
    [
        [
            co + kx * kx * one_c,
            kx * ky * one_c - kz * s,
            kx * kz * one_c + ky * s,
        ],
        [
            ky * kx * one_c + kz * s,
            co + ky * ky * one_c,
            ky * kz * one_c - kx * s,
        ],
        [
            kz * kx * one_c - ky * s,
            kz * ky * one_c + kx * s,
            co + kz * kz * one_c,
        ],
    ]
}

/// Mirror the body through the yz-plane: negate x and relabel joints so the
/// result is anatomically consistent.
fn spatial_flip(x: &SkeletonSequence, mirror: &[usize]) -> SkeletonSequence {
    debug_assert_eq!(mirror.len(), x.v);
    let mut out = x.clone();
    for c in 0..3 {
        let sign = if c == 0 { -1.0 } else { 1.0 };
        for frame in 0..x.t {
            for joint in 0..x.v {
                out.coords[(c * x.t + frame) * x.v + mirror[joint]] =
                    sign * x.at(c, frame, joint);
            }
        }
    }
    out
}

fn reverse_frames(x: &mut SkeletonSequence) {
    let (t, v) = (x.t, x.v);
    for c in 0..3 {
        for frame in 0..t / 2 {
            for joint in 0..v {
                let a = (c * t + frame) * v + joint;
                let b = (c * t + (t - 1 - frame)) * v + joint;
                x.coords.swap(a, b);
            }
        }
    }
}

fn crop_frames(x: &SkeletonSequence, start: usize, len: usize) -> SkeletonSequence {
    debug_assert!(len >= 2 && start + len <= x.t);
    let mut coords = vec![0.0f64; 3 * len * x.v];
    for c in 0..3 {
        for frame in 0..len {
            for joint in 0..x.v {
                coords[(c * len + frame) * x.v + joint] = x.at(c, start + frame, joint);
            }
        }
    }
    SkeletonSequence { coords, t: len, ..x.clone() }
}

fn crop_and_resize(x: &SkeletonSequence, cfg: &AugmentationConfig, rng: &mut impl Rng) -> SkeletonSequence {
    let ratio = draw_range(rng, cfg.crop_ratio[0], cfg.crop_ratio[1]);
    let len = ((ratio * x.t as f64).round() as usize).clamp(2, x.t);
    let start = if x.t > len { rng.gen_range(0..=x.t - len) } else { 0 };
    let cropped = crop_frames(x, start, len);
    temporal_resize(&cropped, x.t).expect("resize back to original length")
}

fn add_noise(x: &mut SkeletonSequence, sigma: f64, rng: &mut impl Rng) {
    if sigma > 0.0 {
        for c in x.coords.iter_mut() {
            *c += sigma * gauss(rng);
        }
    }
}

/// Smooth along frames with the kernel `(w, 1 - 2w, w)`, replicating edges.
fn temporal_blur(x: &SkeletonSequence, w: f64) -> SkeletonSequence {
    if w == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    let (t, v) = (x.t, x.v);
    for c in 0..3 {
        for frame in 0..t {
            let prev = frame.saturating_sub(1);
            let next = (frame + 1).min(t - 1);
            for joint in 0..v {
                out.coords[(c * t + frame) * v + joint] = w * x.at(c, prev, joint)
                    + (1.0 - 2.0 * w) * x.at(c, frame, joint)
                    + w * x.at(c, next, joint);
            }
        }
    }
    out
}

/// The mild pipeline for the target branch: random shear, then temporal crop
/// stretched back to the original length.
pub fn augment_normal(
    x: &SkeletonSequence,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> SkeletonSequence {
    let mut out = x.clone();
    let shear = draw_shear(rng, cfg.shear_range);
    apply_linear(&mut out, &shear);
    crop_and_resize(&out, cfg, rng)
}

/// The aggressive pipeline for the online branch. Stage order is fixed:
/// shear, spatial flip, rotation, axis mask, temporal crop, temporal flip,
/// noise, blur.
pub fn augment_extreme(
    x: &SkeletonSequence,
    cfg: &AugmentationConfig,
    mirror: &[usize],
    rng: &mut impl Rng,
) -> SkeletonSequence {
    let mut out = x.clone();

    let shear = draw_shear(rng, cfg.shear_range);
    apply_linear(&mut out, &shear);

    let flip: f64 = rng.gen();
    if flip < cfg.spatial_flip_prob {
        out = spatial_flip(&out, mirror);
    }

    let axis = unit3(rng);
    let angle = draw_range(rng, 0.0, cfg.rotate_max_degrees.to_radians());
    apply_linear(&mut out, &rotation_matrix(axis, angle));

    let mask_u: f64 = rng.gen();
    let mask_axis = rng.gen_range(0..3usize);
    if mask_u < cfg.axis_mask_prob {
        let (t, v) = (out.t, out.v);
        for i in 0..t * v {
            out.coords[mask_axis * t * v + i] = 0.0;
        }
    }

    out = crop_and_resize(&out, cfg, rng);

    let tflip: f64 = rng.gen();
    if tflip < cfg.temporal_flip_prob {
        reverse_frames(&mut out);
    }

    add_noise(&mut out, cfg.noise_sigma, rng);
    temporal_blur(&out, cfg.blur_weight)
}

/// Build the (online, target) view pair for one sample at one epoch. The two
/// branches use disjoint counter-keyed streams, so the pair is reproducible
/// regardless of batch order or thread schedule.
pub fn make_view_pair(
    x: &SkeletonSequence,
    cfg: &AugmentationConfig,
    mirror: &[usize],
    seed: u64,
    epoch: usize,
) -> (SkeletonSequence, SkeletonSequence) {
    let mut online_rng = stream(seed, domain::AUGMENT, x.sample_id as u64, 2 * epoch as u64);
    let mut target_rng = stream(seed, domain::AUGMENT, x.sample_id as u64, 2 * epoch as u64 + 1);
    let online = augment_extreme(x, cfg, mirror, &mut online_rng);
    let target = augment_normal(x, cfg, &mut target_rng);
    (online, target)
}

/// A generated dataset plus the metadata needed to rebuild or cache it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<SkeletonSequence>,
    pub t: usize,
    pub v: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn generate(
        specs: &[SyntheticClassSpec],
        n_per_class: usize,
        t: usize,
        seed: u64,
    ) -> Result<Self> {
        let sequences = generate_dataset(specs, n_per_class, t, seed)?;
        let v = sequences[0].v;
        Ok(Self { sequences, t, v, n_classes: specs.len(), seed })
    }

    /// Class ids in first-appearance order (the order of the generating specs).
    pub fn class_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for s in &self.sequences {
            if !ids.contains(&s.class_id) {
                ids.push(s.class_id);
            }
        }
        ids
    }
}

const CACHE_MAGIC: &[u8; 4] = b"HLDC";
const CACHE_VERSION: u32 = 1;

impl Dataset {
    /// Serialize to the little-endian binary cache. Coordinates are stored as
    /// `f32`, which is lossless because generation rounds through `f32`.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.sequences.len() * (8 + 12 * self.t * self.v));
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.v as u32).to_le_bytes());
        buf.extend_from_slice(&(self.t as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.sequences.len() as u64).to_le_bytes());
        for s in &self.sequences {
            buf.extend_from_slice(&(s.class_id as u32).to_le_bytes());
            buf.extend_from_slice(&(s.actor_scale as f32).to_le_bytes());
            for &c in &s.coords {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != &CACHE_MAGIC[..] {
            return Err(Error::Corrupt("dataset cache: bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Corrupt(format!("dataset cache: unknown version {version}")));
        }
        let v = cur.u32()? as usize;
        let t = cur.u32()? as usize;
        let n_classes = cur.u32()? as usize;
        let seed = cur.u64()?;
        let n_samples = cur.u64()? as usize;
        let mut sequences = Vec::with_capacity(n_samples);
        for sample_id in 0..n_samples {
            let class_id = cur.u32()? as usize;
            let actor_scale = cur.f32()? as f64;
            let mut coords = Vec::with_capacity(3 * t * v);
            for _ in 0..3 * t * v {
                coords.push(cur.f32()? as f64);
            }
            sequences.push(SkeletonSequence::new(coords, t, v, class_id, sample_id, actor_scale)?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Corrupt("dataset cache: trailing bytes".into()));
        }
        Ok(Self { sequences, t, v, n_classes, seed })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt("dataset cache: truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
