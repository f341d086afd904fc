//! The twin-branch network: a small spatio-temporal graph encoder, projector
//! and predictor on the online side, EMA copies of encoder and projector on
//! the target side.
//!
//! Parameters live as plain `f64` buffers on the model; every forward pass
//! binds them onto a fresh tape (trainable leaves for the online branch,
//! constants for the target branch, which is how the stop-gradient is
//! enforced by construction).

use rand::Rng;

use crate::data::SkeletonSequence;
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::streams::{domain, stream};

/// Joint graph with a normalized adjacency. Self-loops are added and the
/// whole matrix is scaled by `1 / (1 + max_degree)`, which keeps it symmetric
/// with every row summing to at most one.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub v: usize,
    pub edges: Vec<(usize, usize)>,
    adjacency: Vec<f64>,
}

impl SkeletonGraph {
    pub fn new(v: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if v == 0 {
            return Err(Error::InvalidInput("graph needs at least one joint".into()));
        }
        let mut degree = vec![0usize; v];
        let mut adjacency = vec![0.0f64; v * v];
        for &(a, b) in edges {
            if a >= v || b >= v {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range for {v} joints")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop ({a}, {b}); self-loops are implicit")));
            }
            if adjacency[a * v + b] != 0.0 {
                return Err(Error::InvalidInput(format!("duplicate edge ({a}, {b})")));
            }
            adjacency[a * v + b] = 1.0;
            adjacency[b * v + a] = 1.0;
            degree[a] += 1;
            degree[b] += 1;
        }
        for j in 0..v {
            adjacency[j * v + j] = 1.0;
        }
        let max_degree = degree.iter().copied().max().unwrap_or(0);
        let scale = 1.0 / (1.0 + max_degree as f64);
        for a in adjacency.iter_mut() {
            *a *= scale;
        }
        Ok(Self { v, edges: edges.to_vec(), adjacency })
    }

    /// The 8-joint desk skeleton.
    pub fn default_desk() -> Self {
        Self::new(crate::data::skeleton::V, &crate::data::skeleton::EDGES)
            .expect("desk skeleton is valid")
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }
}

/// Architecture and twin-update knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output feature / embedding dimensionality D.
    pub feature_dim: usize,
    /// Encoder hidden channel width.
    pub hidden_channels: usize,
    /// Temporal kernel width (odd).
    pub kernel_t: usize,
    /// EMA coefficient for the target branch.
    pub ema_coefficient: f64,
    /// Ball curvature c.
    pub curvature: f64,
    /// Multiplier on the output-layer weights of projector and predictor.
    /// Values much larger than 1 start the embeddings at the ball boundary.
    pub boundary_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            hidden_channels: 32,
            kernel_t: 3,
            ema_coefficient: 0.99,
            curvature: 1.0,
            boundary_init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("feature_dim and hidden_channels must be >= 1".into()));
        }
        if self.kernel_t == 0 || self.kernel_t % 2 == 0 {
            return Err(Error::Config(format!("kernel_t must be odd, got {}", self.kernel_t)));
        }
        if !(self.ema_coefficient.is_finite() && (0.0..=1.0).contains(&self.ema_coefficient)) {
            return Err(Error::Config(format!(
                "ema_coefficient must be in [0, 1], got {}",
                self.ema_coefficient
            )));
        }
        Curvature::new(self.curvature)?;
        if !(self.boundary_init_scale.is_finite() && self.boundary_init_scale > 0.0) {
            return Err(Error::Config(format!(
                "boundary_init_scale must be > 0, got {}",
                self.boundary_init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Shape `[in_dim, out_dim]`, laid out row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// 1x1 channel mix, shape `[mid_c, in_c]`.
    pub mix_w: Vec<f64>,
    pub mix_b: Vec<f64>,
    /// Temporal convolution, shape `[out_c, mid_c, kt]`.
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    /// Residual 1x1 projection, shape `[out_c, in_c]`. The skip path keeps
    /// the input signal from attenuating through the stack; without it the
    /// pooled features are dominated by the bias terms.
    pub res_w: Vec<f64>,
    pub res_b: Vec<f64>,
    pub in_c: usize,
    pub mid_c: usize,
    pub out_c: usize,
    pub kt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub l1: Linear,
    pub l2: Linear,
}

fn uniform_init(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn init_linear(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Linear {
    Linear {
        w: uniform_init(rng, in_dim * out_dim, in_dim),
        b: uniform_init(rng, out_dim, in_dim),
        in_dim,
        out_dim,
    }
}

fn init_block(rng: &mut impl Rng, in_c: usize, mid_c: usize, out_c: usize, kt: usize) -> Block {
    Block {
        mix_w: uniform_init(rng, mid_c * in_c, in_c),
        mix_b: uniform_init(rng, mid_c, in_c),
        conv_w: uniform_init(rng, out_c * mid_c * kt, mid_c * kt),
        conv_b: uniform_init(rng, out_c, mid_c * kt),
        res_w: uniform_init(rng, out_c * in_c, in_c),
        res_b: uniform_init(rng, out_c, in_c),
        in_c,
        mid_c,
        out_c,
        kt,
    }
}

fn init_head(rng: &mut impl Rng, dim: usize, out_scale: f64) -> HeadParams {
    let l1 = init_linear(rng, dim, dim);
    let mut l2 = init_linear(rng, dim, dim);
    for w in l2.w.iter_mut() {
        *w *= out_scale;
    }
    HeadParams { l1, l2 }
}

/// Both branches of the twin network. The target branch is structurally a
/// copy of (encoder, projector); only the online branch has the predictor.
#[derive(Debug, Clone)]
pub struct TwinModel {
    pub graph: SkeletonGraph,
    pub config: ModelConfig,
    pub online_encoder: EncoderParams,
    pub online_projector: HeadParams,
    pub predictor: HeadParams,
    pub target_encoder: EncoderParams,
    pub target_projector: HeadParams,
}

impl TwinModel {
    /// Deterministic initialization from the model stream of `seed`. The
    /// target branch starts as an exact copy of the online branch.
    pub fn init(config: ModelConfig, graph: SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, domain::MODEL_INIT, 0, 0);
        let (d, h, kt) = (config.feature_dim, config.hidden_channels, config.kernel_t);
        let encoder = EncoderParams {
            blocks: vec![init_block(&mut rng, 3, h, h, kt), init_block(&mut rng, h, h, d, kt)],
        };
        let projector = init_head(&mut rng, d, config.boundary_init_scale);
        let predictor = init_head(&mut rng, d, config.boundary_init_scale);
        Ok(Self {
            graph,
            config,
            target_encoder: encoder.clone(),
            target_projector: projector.clone(),
            online_encoder: encoder,
            online_projector: projector,
            predictor,
        })
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.config.curvature).expect("validated at init")
    }

    /// All parameters in canonical order: online branch first, then target.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &Vec<f64>)> {
        let mut out = Vec::new();
        push_encoder(&mut out, "online.encoder", &self.online_encoder);
        push_head(&mut out, "online.projector", &self.online_projector);
        push_head(&mut out, "online.predictor", &self.predictor);
        push_encoder(&mut out, "target.encoder", &self.target_encoder);
        push_head(&mut out, "target.projector", &self.target_projector);
        out
    }

    /// Mutable views of the online parameters, in the same order as the
    /// `online.*` prefix of `named_params` and of `TwinForward::online_refs`.
    pub fn online_params_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        push_encoder_mut(&mut out, "online.encoder", &mut self.online_encoder);
        push_head_mut(&mut out, "online.projector", &mut self.online_projector);
        push_head_mut(&mut out, "online.predictor", &mut self.predictor);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        push_encoder_mut(&mut out, "online.encoder", &mut self.online_encoder);
        push_head_mut(&mut out, "online.projector", &mut self.online_projector);
        push_head_mut(&mut out, "online.predictor", &mut self.predictor);
        push_encoder_mut(&mut out, "target.encoder", &mut self.target_encoder);
        push_head_mut(&mut out, "target.projector", &mut self.target_projector);
        out
    }
}

fn push_encoder<'a>(
    out: &mut Vec<(String, Vec<usize>, &'a Vec<f64>)>,
    prefix: &str,
    enc: &'a EncoderParams,
) {
    for (i, b) in enc.blocks.iter().enumerate() {
        out.push((format!("{prefix}.block{i}.mix_w"), vec![b.mid_c, b.in_c], &b.mix_w));
        out.push((format!("{prefix}.block{i}.mix_b"), vec![b.mid_c], &b.mix_b));
        out.push((format!("{prefix}.block{i}.conv_w"), vec![b.out_c, b.mid_c, b.kt], &b.conv_w));
        out.push((format!("{prefix}.block{i}.conv_b"), vec![b.out_c], &b.conv_b));
        out.push((format!("{prefix}.block{i}.res_w"), vec![b.out_c, b.in_c], &b.res_w));
        out.push((format!("{prefix}.block{i}.res_b"), vec![b.out_c], &b.res_b));
    }
}

fn push_head<'a>(
    out: &mut Vec<(String, Vec<usize>, &'a Vec<f64>)>,
    prefix: &str,
    head: &'a HeadParams,
) {
    for (tag, l) in [("l1", &head.l1), ("l2", &head.l2)] {
        out.push((format!("{prefix}.{tag}.w"), vec![l.in_dim, l.out_dim], &l.w));
        out.push((format!("{prefix}.{tag}.b"), vec![l.out_dim], &l.b));
    }
}

fn push_encoder_mut<'a>(
    out: &mut Vec<(String, &'a mut Vec<f64>)>,
    prefix: &str,
    enc: &'a mut EncoderParams,
) {
    for (i, b) in enc.blocks.iter_mut().enumerate() {
        out.push((format!("{prefix}.block{i}.mix_w"), &mut b.mix_w));
        out.push((format!("{prefix}.block{i}.mix_b"), &mut b.mix_b));
        out.push((format!("{prefix}.block{i}.conv_w"), &mut b.conv_w));
        out.push((format!("{prefix}.block{i}.conv_b"), &mut b.conv_b));
        out.push((format!("{prefix}.block{i}.res_w"), &mut b.res_w));
        out.push((format!("{prefix}.block{i}.res_b"), &mut b.res_b));
    }
}

fn push_head_mut<'a>(
    out: &mut Vec<(String, &'a mut Vec<f64>)>,
    prefix: &str,
    head: &'a mut HeadParams,
) {
    out.push((format!("{prefix}.l1.w"), &mut head.l1.w));
    out.push((format!("{prefix}.l1.b"), &mut head.l1.b));
    out.push((format!("{prefix}.l2.w"), &mut head.l2.w));
    out.push((format!("{prefix}.l2.b"), &mut head.l2.b));
}

/// Replace every target parameter with `ema * target + (1 - ema) * online`.
/// Pure data movement; gradients never flow through it.
pub fn ema_update(model: &mut TwinModel) {
    let a = model.config.ema_coefficient;
    let blend = |target: &mut Vec<f64>, online: &Vec<f64>| {
        for (t, &o) in target.iter_mut().zip(online) {
            *t = a * *t + (1.0 - a) * o;
        }
    };
    for (tb, ob) in model.target_encoder.blocks.iter_mut().zip(&model.online_encoder.blocks) {
        blend(&mut tb.mix_w, &ob.mix_w);
        blend(&mut tb.mix_b, &ob.mix_b);
        blend(&mut tb.conv_w, &ob.conv_w);
        blend(&mut tb.conv_b, &ob.conv_b);
        blend(&mut tb.res_w, &ob.res_w);
        blend(&mut tb.res_b, &ob.res_b);
    }
    blend(&mut model.target_projector.l1.w, &model.online_projector.l1.w);
    blend(&mut model.target_projector.l1.b, &model.online_projector.l1.b);
    blend(&mut model.target_projector.l2.w, &model.online_projector.l2.w);
    blend(&mut model.target_projector.l2.b, &model.online_projector.l2.b);
}

/// Stack sequences into a `(N, 3, T, V)` tensor, subtracting each joint
/// trajectory's temporal mean. The network sees displacements around every
/// joint's rest position, not absolute poses: the static skeleton carries no
/// class or sample information, and leaving it in lets it drown out the
/// motion the whole pipeline is about.
pub fn batch_tensor(seqs: &[SkeletonSequence]) -> Result<Tensor> {
    if seqs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (t, v) = (seqs[0].t, seqs[0].v);
    let mut data = Vec::with_capacity(seqs.len() * 3 * t * v);
    for s in seqs {
        if (s.t, s.v) != (t, v) {
            return Err(Error::Shape(format!(
                "batch mixes ({t}, {v}) and ({}, {}) sequences",
                s.t, s.v
            )));
        }
        let base = data.len();
        data.extend_from_slice(&s.coords);
        for c in 0..3 {
            for j in 0..v {
                let mut m = 0.0;
                for f in 0..t {
                    m += data[base + (c * t + f) * v + j];
                }
                m /= t as f64;
                for f in 0..t {
                    data[base + (c * t + f) * v + j] -= m;
                }
            }
        }
    }
    Tensor::new(vec![seqs.len(), 3, t, v], data)
}

/// A parameter bound onto a tape, remembered so gradients can be read back
/// by name after `backward`.
#[derive(Debug, Clone)]
pub struct ParamRef {
    pub name: String,
    pub id: NodeId,
}

struct Binder<'a> {
    tape: &'a mut Tape,
    refs: Vec<ParamRef>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    fn new(tape: &'a mut Tape, trainable: bool) -> Self {
        Self { tape, refs: Vec::new(), trainable }
    }

    fn param(&mut self, name: String, shape: Vec<usize>, data: &[f64]) -> Result<NodeId> {
        let t = Tensor::new(shape, data.to_vec())?;
        let id = if self.trainable {
            self.tape.leaf(t.with_grad())
        } else {
            self.tape.constant(t)
        };
        self.refs.push(ParamRef { name, id });
        Ok(id)
    }
}

fn encoder_on_tape(
    binder: &mut Binder,
    x: NodeId,
    graph: &SkeletonGraph,
    enc: &EncoderParams,
    prefix: &str,
) -> Result<NodeId> {
    let shape = binder.tape.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != enc.blocks[0].in_c {
        return Err(Error::Shape(format!(
            "encoder wants (N, {}, T, V), got {shape:?}",
            enc.blocks[0].in_c
        )));
    }
    if shape[3] != graph.v {
        return Err(Error::Shape(format!(
            "batch has {} joints but the graph has {}",
            shape[3], graph.v
        )));
    }
    let adj = binder.tape.constant(Tensor::new(vec![graph.v, graph.v], graph.adjacency().to_vec())?);
    let mut h = x;
    for (i, block) in enc.blocks.iter().enumerate() {
        let mix_w = binder.param(
            format!("{prefix}.block{i}.mix_w"),
            vec![block.mid_c, block.in_c],
            &block.mix_w,
        )?;
        let mix_b = binder.param(format!("{prefix}.block{i}.mix_b"), vec![block.mid_c], &block.mix_b)?;
        let conv_w = binder.param(
            format!("{prefix}.block{i}.conv_w"),
            vec![block.out_c, block.mid_c, block.kt],
            &block.conv_w,
        )?;
        let conv_b = binder.param(format!("{prefix}.block{i}.conv_b"), vec![block.out_c], &block.conv_b)?;
        let res_w = binder.param(
            format!("{prefix}.block{i}.res_w"),
            vec![block.out_c, block.in_c],
            &block.res_w,
        )?;
        let res_b = binder.param(format!("{prefix}.block{i}.res_b"), vec![block.out_c], &block.res_b)?;
        let agg = binder.tape.neighbor_agg(h, adj)?;
        let mixed = binder.tape.channel_mix(agg, mix_w, mix_b)?;
        let activated = binder.tape.relu(mixed)?;
        let conv = binder.tape.temporal_conv(activated, conv_w, conv_b)?;
        let skip = binder.tape.channel_mix(h, res_w, res_b)?;
        let summed = binder.tape.add(conv, skip)?;
        h = binder.tape.relu(summed)?;
    }
    // Global mean pooling over joints, then frames: (N, D, T, V) -> (N, D).
    let pooled_v = binder.tape.mean_axis(h, 3)?;
    binder.tape.mean_axis(pooled_v, 2)
}

fn head_on_tape(binder: &mut Binder, y: NodeId, head: &HeadParams, prefix: &str) -> Result<NodeId> {
    let w1 = binder.param(
        format!("{prefix}.l1.w"),
        vec![head.l1.in_dim, head.l1.out_dim],
        &head.l1.w,
    )?;
    let b1 = binder.param(format!("{prefix}.l1.b"), vec![head.l1.out_dim], &head.l1.b)?;
    let w2 = binder.param(
        format!("{prefix}.l2.w"),
        vec![head.l2.in_dim, head.l2.out_dim],
        &head.l2.w,
    )?;
    let b2 = binder.param(format!("{prefix}.l2.b"), vec![head.l2.out_dim], &head.l2.b)?;
    let a1 = binder.tape.matmul(y, w1)?;
    let a1b = binder.tape.add(a1, b1)?;
    let hidden = binder.tape.relu(a1b)?;
    let a2 = binder.tape.matmul(hidden, w2)?;
    binder.tape.add(a2, b2)
}

/// Frozen-parameter encoder pass: features `(N, D)` with no gradient
/// bookkeeping. Used by probes and analytics.
pub fn encoder_forward(x: &Tensor, graph: &SkeletonGraph, enc: &EncoderParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x_id = tape.constant(x.clone());
    let mut binder = Binder::new(&mut tape, false);
    let out = encoder_on_tape(&mut binder, x_id, graph, enc, "frozen.encoder")?;
    Ok(tape.value(out).clone())
}

/// Frozen-parameter head pass: linear, ReLU, linear.
pub fn head_forward(y: &Tensor, head: &HeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let y_id = tape.constant(y.clone());
    let mut binder = Binder::new(&mut tape, false);
    let out = head_on_tape(&mut binder, y_id, head, "frozen.head")?;
    Ok(tape.value(out).clone())
}

/// Everything the trainer needs back from one twin pass.
pub struct TwinForward {
    /// Online hyperbolic embeddings h, shape `(N, D)`.
    pub h_online: NodeId,
    /// Target hyperbolic embeddings h-hat, shape `(N, D)`.
    pub h_target: NodeId,
    /// Pre-map online vector (predictor output), shape `(N, D)`.
    pub z_online: NodeId,
    /// Pre-map target vector (target projector output), shape `(N, D)`.
    pub z_target: NodeId,
    /// Online parameters in canonical order (matches `online_params_mut`).
    pub online_refs: Vec<ParamRef>,
    /// Target parameters; these are constants and never receive gradients.
    pub target_refs: Vec<ParamRef>,
}

/// Run both branches on one view pair. The online path is
/// `exp_map0(q(g(f(x))))`; the target path is `exp_map0(g^(f^(x^)))` built
/// entirely from constant nodes, so no gradient can reach it.
pub fn twin_forward(
    tape: &mut Tape,
    model: &TwinModel,
    x_online: &Tensor,
    x_target: &Tensor,
) -> Result<TwinForward> {
    if x_online.shape() != x_target.shape() {
        return Err(Error::Shape(format!(
            "view pair shapes differ: {:?} vs {:?}",
            x_online.shape(),
            x_target.shape()
        )));
    }
    let c = model.curvature();

    let x_on = tape.constant(x_online.clone());
    let mut online = Binder::new(tape, true);
    let feat = encoder_on_tape(&mut online, x_on, &model.graph, &model.online_encoder, "online.encoder")?;
    let projected = head_on_tape(&mut online, feat, &model.online_projector, "online.projector")?;
    let z_online = head_on_tape(&mut online, projected, &model.predictor, "online.predictor")?;
    let online_refs = online.refs;
    let h_online = tape.exp_map0(z_online, c)?;

    let x_tg = tape.constant(x_target.clone());
    let mut target = Binder::new(tape, false);
    let feat_t = encoder_on_tape(&mut target, x_tg, &model.graph, &model.target_encoder, "target.encoder")?;
    let proj_t = head_on_tape(&mut target, feat_t, &model.target_projector, "target.projector")?;
    let target_refs = target.refs;
    let z_target = tape.stop_grad(proj_t);
    let h_target = tape.exp_map0(z_target, c)?;

    Ok(TwinForward { h_online, h_target, z_online, z_target, online_refs, target_refs })
}

/// Which branch to read in frozen evaluation helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Online,
    Target,
}

/// Frozen hyperbolic embeddings for a batch: the full branch pipeline ending
/// in the exponential map. Online uses the predictor; target does not.
pub fn hyperbolic_embeddings(model: &TwinModel, x: &Tensor, branch: Branch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x_id = tape.constant(x.clone());
    let mut binder = Binder::new(&mut tape, false);
    let z = match branch {
        Branch::Online => {
            let feat = encoder_on_tape(&mut binder, x_id, &model.graph, &model.online_encoder, "eval.encoder")?;
            let proj = head_on_tape(&mut binder, feat, &model.online_projector, "eval.projector")?;
            head_on_tape(&mut binder, proj, &model.predictor, "eval.predictor")?
        }
        Branch::Target => {
            let feat = encoder_on_tape(&mut binder, x_id, &model.graph, &model.target_encoder, "eval.encoder")?;
            head_on_tape(&mut binder, feat, &model.target_projector, "eval.projector")?
        }
    };
    let h = tape.exp_map0(z, model.curvature())?;
    Ok(tape.value(h).clone())
}

/// Online-encoder pass with the encoder parameters recorded as trainable
/// leaves — the supervised fine-tuning entry point. Returns the feature
/// node `(N, D)` and the parameter refs in `online_params_mut` order.
pub fn encoder_on_tape_trainable(
    tape: &mut Tape,
    model: &TwinModel,
    x: &Tensor,
) -> Result<(NodeId, Vec<ParamRef>)> {
    let x_id = tape.constant(x.clone());
    let mut binder = Binder::new(tape, true);
    let feat =
        encoder_on_tape(&mut binder, x_id, &model.graph, &model.online_encoder, "online.encoder")?;
    Ok((feat, binder.refs))
}

/// Frozen encoder features for a batch.
pub fn encoder_features(model: &TwinModel, x: &Tensor, branch: Branch) -> Result<Tensor> {
    let enc = match branch {
        Branch::Online => &model.online_encoder,
        Branch::Target => &model.target_encoder,
    };
    encoder_forward(x, &model.graph, enc)
}
