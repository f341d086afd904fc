//! A small reverse-mode differentiation engine over a fixed operation set.
//!
//! Everything is f64 and row-major. A [`Tape`] records one forward pass;
//! node ids index into it, and inputs always precede the nodes that use
//! them, so a single reverse sweep accumulates each gradient exactly once.
//! Tapes are cheap and meant to be rebuilt every step; none of this is
//! shared between threads.

use crate::error::{Error, Result};
use crate::geometry::{self, dot, norm, Curvature};

/// Dense row-major array with an explicit extent list. Scalars have an
/// empty shape and a single data element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (= {} elements)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v], requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Sole element of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Shape(format!("item() on non-scalar shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }
}

/// Handle to a recorded value. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    StopGrad,
    Add,
    Scale(f64),
    WeightedSum(Vec<f64>),
    Matmul,
    Relu,
    Tanh,
    Concat(usize),
    Reshape,
    Sum(usize),
    Mean(usize),
    TemporalConv,
    NeighborAgg,
    ChannelMix,
    L2NormRows,
    ExpMap0(Curvature),
    PoincareRowLoss,
    CosineRowLoss,
    SoftmaxCrossEntropy(Vec<usize>),
    InfoNce(f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGrad => "stop_grad",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Matmul => "matmul",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Concat(_) => "concat",
            Op::Reshape => "reshape",
            Op::Sum(_) => "sum_axis",
            Op::Mean(_) => "mean_axis",
            Op::TemporalConv => "temporal_conv",
            Op::NeighborAgg => "neighbor_agg",
            Op::ChannelMix => "channel_mix",
            Op::L2NormRows => "l2_norm_rows",
            Op::ExpMap0(_) => "exp_map0",
            Op::PoincareRowLoss => "poincare_loss",
            Op::CosineRowLoss => "cosine_loss",
            Op::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
            Op::InfoNce(_) => "infonce",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Per-node gradients from one backward sweep, indexed by [`NodeId`].
/// `wrt` returns `None` for nodes that received no gradient — constants,
/// anything behind a stop-gradient, and nodes unreachable from the loss.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let t = t.with_grad();
        self.push_unchecked(Op::Leaf, vec![], t)
    }

    /// Non-differentiable input (data, adjacency, queue snapshots …).
    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.requires_grad = false;
        self.push_unchecked(Op::Leaf, vec![], t)
    }

    fn push_unchecked(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a result, propagating the grad flag and refusing non-finite
    /// values so a blowup is caught at the op that produced it.
    fn push(&mut self, op: Op, inputs: Vec<NodeId>, mut value: Tensor) -> Result<NodeId> {
        if let Some(bad) = value.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value at flat index {bad}",
                op.name()
            )));
        }
        value.requires_grad = match op {
            Op::StopGrad => false,
            _ => inputs.iter().any(|id| self.nodes[id.0].value.requires_grad),
        };
        Ok(self.push_unchecked(op, inputs, value))
    }

    /// Identity forward; the reverse sweep does not cross it.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.clone();
        // Infallible: the input was finite when recorded.
        self.push(Op::StopGrad, vec![x], value).expect("stop_grad of a recorded value")
    }

    /// Elementwise sum; the second operand may be a trailing-axes shape of
    /// the first (a row-major suffix), in which case it is broadcast over
    /// the leading axes — the usual bias add.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.shape.ends_with(&tb.shape) {
            return Err(Error::Shape(format!(
                "add: {:?} cannot absorb {:?} (suffix broadcast only)",
                ta.shape, tb.shape
            )));
        }
        let bl = tb.data.len().max(1);
        let data = ta.data.iter().enumerate().map(|(i, x)| x + tb.data[i % bl]).collect();
        let out = Tensor { shape: ta.shape.clone(), data, requires_grad: false };
        self.push(Op::Add, vec![a, b], out)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        if !s.is_finite() {
            return Err(Error::InvalidInput(format!("scale factor must be finite, got {s}")));
        }
        let tx = &self.nodes[x.0].value;
        let out = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|v| v * s).collect(),
            requires_grad: false,
        };
        self.push(Op::Scale(s), vec![x], out)
    }

    /// Σᵢ wᵢ·xᵢ over the flattened input. Used by the finite-difference
    /// harness to scalarize multi-output ops under a random covector, which
    /// catches backward bugs a plain sum would cancel away.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        if weights.len() != tx.data.len() {
            return Err(Error::Shape(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                tx.data.len()
            )));
        }
        let v = tx.data.iter().zip(weights).map(|(x, w)| x * w).sum();
        self.push(Op::WeightedSum(weights.to_vec()), vec![x], Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ([n, k], [k2, m]) = (dims2(ta, "matmul lhs")?, dims2(tb, "matmul rhs")?);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner extents differ, {:?} × {:?}",
                ta.shape, tb.shape
            )));
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * m..(p + 1) * m];
                let orow = &mut data[i * m..(i + 1) * m];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let out = Tensor { shape: vec![n, m], data, requires_grad: false };
        self.push(Op::Matmul, vec![a, b], out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let out = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|v| v.max(0.0)).collect(),
            requires_grad: false,
        };
        self.push(Op::Relu, vec![x], out)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let out = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|v| v.tanh()).collect(),
            requires_grad: false,
        };
        self.push(Op::Tanh, vec![x], out)
    }

    /// Concatenates two tensors along `axis`; all other extents must match.
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != tb.shape.len() || axis >= ta.shape.len() {
            return Err(Error::Shape(format!(
                "concat axis {axis}: {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        for (i, (x, y)) in ta.shape.iter().zip(&tb.shape).enumerate() {
            if i != axis && x != y {
                return Err(Error::Shape(format!(
                    "concat axis {axis}: {:?} vs {:?}",
                    ta.shape, tb.shape
                )));
            }
        }
        let (outer, inner) = split_at_axis(&ta.shape, axis);
        let (ea, eb) = (ta.shape[axis], tb.shape[axis]);
        let mut shape = ta.shape.clone();
        shape[axis] = ea + eb;
        let mut data = Vec::with_capacity(ta.data.len() + tb.data.len());
        for o in 0..outer {
            data.extend_from_slice(&ta.data[o * ea * inner..(o + 1) * ea * inner]);
            data.extend_from_slice(&tb.data[o * eb * inner..(o + 1) * eb * inner]);
        }
        let out = Tensor { shape, data, requires_grad: false };
        self.push(Op::Concat(axis), vec![a, b], out)
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != tx.data.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?} changes the element count",
                tx.shape
            )));
        }
        let out = Tensor { shape, data: tx.data.clone(), requires_grad: false };
        self.push(Op::Reshape, vec![x], out)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let value = self.reduce(x, axis, false)?;
        self.push(Op::Sum(axis), vec![x], value)
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let value = self.reduce(x, axis, true)?;
        self.push(Op::Mean(axis), vec![x], value)
    }

    fn reduce(&self, x: NodeId, axis: usize, mean: bool) -> Result<Tensor> {
        let tx = &self.nodes[x.0].value;
        if axis >= tx.shape.len() {
            return Err(Error::Shape(format!("reduce axis {axis} out of range for {:?}", tx.shape)));
        }
        let (outer, inner) = split_at_axis(&tx.shape, axis);
        let e = tx.shape[axis];
        if e == 0 {
            return Err(Error::Shape(format!("reduce over empty axis {axis} of {:?}", tx.shape)));
        }
        let mut shape = tx.shape.clone();
        shape.remove(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..e {
                let src = &tx.data[(o * e + k) * inner..(o * e + k + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = 1.0 / e as f64;
            for d in &mut data {
                *d *= inv;
            }
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    /// Batched 1-D convolution over the time axis with zero padding and
    /// unchanged length. x: (N,C,T,V), w: (K,C,kt) with kt odd, b: (K).
    pub fn temporal_conv(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let [n, c, t, v] = dims4(tx, "temporal_conv input")?;
        let (kk, kc, kt) = match tw.shape[..] {
            [a, b2, c2] => (a, b2, c2),
            _ => return Err(Error::Shape(format!("temporal_conv kernel must be 3-d, got {:?}", tw.shape))),
        };
        if kc != c || tb.shape != [kk] {
            return Err(Error::Shape(format!(
                "temporal_conv: input {:?}, kernel {:?}, bias {:?}",
                tx.shape, tw.shape, tb.shape
            )));
        }
        if kt % 2 == 0 {
            return Err(Error::InvalidInput(format!("temporal kernel width must be odd, got {kt}")));
        }
        let pad = kt / 2;
        let mut data = vec![0.0; n * kk * t * v];
        for ni in 0..n {
            for k in 0..kk {
                let bias = tb.data[k];
                for ti in 0..t {
                    let obase = ((ni * kk + k) * t + ti) * v;
                    for o in &mut data[obase..obase + v] {
                        *o = bias;
                    }
                    for ci in 0..c {
                        for dt in 0..kt {
                            let tt = ti + dt;
                            if tt < pad || tt - pad >= t {
                                continue;
                            }
                            let wv = tw.data[(k * c + ci) * kt + dt];
                            if wv == 0.0 {
                                continue;
                            }
                            let xbase = ((ni * c + ci) * t + (tt - pad)) * v;
                            for off in 0..v {
                                data[obase + off] += wv * tx.data[xbase + off];
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor { shape: vec![n, kk, t, v], data, requires_grad: false };
        self.push(Op::TemporalConv, vec![x, w, b], out)
    }

    /// Aggregation over graph neighborhoods: out[..,v] = Σᵤ adj[v,u]·x[..,u].
    /// x: (N,C,T,V), adj: (V,V).
    pub fn neighbor_agg(&mut self, x: NodeId, adj: NodeId) -> Result<NodeId> {
        let (tx, ta) = (&self.nodes[x.0].value, &self.nodes[adj.0].value);
        let [n, c, t, v] = dims4(tx, "neighbor_agg input")?;
        if ta.shape != [v, v] {
            return Err(Error::Shape(format!(
                "neighbor_agg: input {:?} needs a {v}×{v} adjacency, got {:?}",
                tx.shape, ta.shape
            )));
        }
        let mut data = vec![0.0; tx.data.len()];
        for slab in 0..n * c * t {
            let xrow = &tx.data[slab * v..(slab + 1) * v];
            let orow = &mut data[slab * v..(slab + 1) * v];
            for (vi, o) in orow.iter_mut().enumerate() {
                let arow = &ta.data[vi * v..(vi + 1) * v];
                *o = dot(arow, xrow);
            }
        }
        let out = Tensor { shape: tx.shape.clone(), data, requires_grad: false };
        self.push(Op::NeighborAgg, vec![x, adj], out)
    }

    /// Pointwise (1×1) channel remap: out[n,k,t,v] = b[k] + Σ_c w[k,c]·x[n,c,t,v].
    /// x: (N,C,T,V), w: (K,C), b: (K).
    pub fn channel_mix(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let [n, c, t, v] = dims4(tx, "channel_mix input")?;
        let [kk, kc] = dims2(tw, "channel_mix weight")?;
        if kc != c || tb.shape != [kk] {
            return Err(Error::Shape(format!(
                "channel_mix: input {:?}, weight {:?}, bias {:?}",
                tx.shape, tw.shape, tb.shape
            )));
        }
        let tv = t * v;
        let mut data = vec![0.0; n * kk * tv];
        for ni in 0..n {
            for k in 0..kk {
                let obase = (ni * kk + k) * tv;
                for o in &mut data[obase..obase + tv] {
                    *o = tb.data[k];
                }
                for ci in 0..c {
                    let wv = tw.data[k * c + ci];
                    if wv == 0.0 {
                        continue;
                    }
                    let xbase = (ni * c + ci) * tv;
                    for off in 0..tv {
                        data[obase + off] += wv * tx.data[xbase + off];
                    }
                }
            }
        }
        let out = Tensor { shape: vec![n, kk, t, v], data, requires_grad: false };
        self.push(Op::ChannelMix, vec![x, w, b], out)
    }

    /// Euclidean norm of each row: (N,D) → (N,).
    pub fn l2_norm_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let [n, d] = dims2(tx, "l2_norm_rows input")?;
        let data = (0..n).map(|i| norm(&tx.data[i * d..(i + 1) * d])).collect();
        let out = Tensor { shape: vec![n], data, requires_grad: false };
        self.push(Op::L2NormRows, vec![x], out)
    }

    /// Row-wise exponential map at the origin; delegates to the geometry
    /// routine so forward values match it bit for bit, clamp included.
    pub fn exp_map0(&mut self, z: NodeId, c: Curvature) -> Result<NodeId> {
        let tz = &self.nodes[z.0].value;
        let [n, d] = dims2(tz, "exp_map0 input")?;
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let p = geometry::exp_map0(&tz.data[i * d..(i + 1) * d], c)?;
            data.extend_from_slice(p.coords());
        }
        let out = Tensor { shape: vec![n, d], data, requires_grad: false };
        self.push(Op::ExpMap0(c), vec![z], out)
    }

    /// Row-wise hyperbolic distance on the unit ball: (N,D),(N,D) → (N,).
    pub fn poincare_loss(&mut self, h: NodeId, h_hat: NodeId) -> Result<NodeId> {
        let (th, tt) = (&self.nodes[h.0].value, &self.nodes[h_hat.0].value);
        let [n, d] = dims2(th, "poincare_loss lhs")?;
        if tt.shape != [n, d] {
            return Err(Error::Shape(format!("poincare_loss: {:?} vs {:?}", th.shape, tt.shape)));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let hr = &th.data[i * d..(i + 1) * d];
            let tr = &tt.data[i * d..(i + 1) * d];
            let q: f64 = hr.iter().zip(tr).map(|(a, b)| (a - b) * (a - b)).sum();
            let a = 1.0 - dot(hr, hr);
            let b = 1.0 - dot(tr, tr);
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "poincare_loss row {i}: norms must be < 1, got {} and {}",
                    norm(hr),
                    norm(tr)
                )));
            }
            data.push((1.0 + 2.0 * q / (a * b)).max(1.0).acosh());
        }
        let out = Tensor { shape: vec![n], data, requires_grad: false };
        self.push(Op::PoincareRowLoss, vec![h, h_hat], out)
    }

    /// Row-wise angular distance 1 − cos: (N,D),(N,D) → (N,).
    pub fn cosine_loss(&mut self, h: NodeId, h_hat: NodeId) -> Result<NodeId> {
        let (th, tt) = (&self.nodes[h.0].value, &self.nodes[h_hat.0].value);
        let [n, d] = dims2(th, "cosine_loss lhs")?;
        if tt.shape != [n, d] {
            return Err(Error::Shape(format!("cosine_loss: {:?} vs {:?}", th.shape, tt.shape)));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let hr = &th.data[i * d..(i + 1) * d];
            let tr = &tt.data[i * d..(i + 1) * d];
            let (nh, nt) = (norm(hr), norm(tr));
            if nh <= 1e-12 || nt <= 1e-12 {
                return Err(Error::InvalidInput(format!("cosine_loss row {i}: zero-norm vector")));
            }
            data.push(1.0 - dot(hr, tr) / (nh * nt));
        }
        let out = Tensor { shape: vec![n], data, requires_grad: false };
        self.push(Op::CosineRowLoss, vec![h, h_hat], out)
    }

    /// Mean cross-entropy of row-wise softmax against integer labels:
    /// (N,K) → scalar.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let tl = &self.nodes[logits.0].value;
        let [n, k] = dims2(tl, "softmax_cross_entropy logits")?;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), n)));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
        }
        let mut total = 0.0;
        for i in 0..n {
            let row = &tl.data[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
        }
        let out = Tensor::scalar(total / n as f64);
        self.push(Op::SoftmaxCrossEntropy(labels.to_vec()), vec![logits], out)
    }

    /// Mean contrastive loss over rows: positives are the index-aligned
    /// rows of `z_hat`, negatives are shared across the batch. `z` and
    /// `z_hat` rows are unit-normalized internally; `negatives` rows are
    /// used as-is and must be gradient-free. (N,D),(N,D),(M,D) → scalar.
    pub fn infonce(&mut self, z: NodeId, z_hat: NodeId, negatives: NodeId, tau: f64) -> Result<NodeId> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
        }
        let (tz, tt, tm) = (
            &self.nodes[z.0].value,
            &self.nodes[z_hat.0].value,
            &self.nodes[negatives.0].value,
        );
        if tm.requires_grad {
            return Err(Error::InvalidInput("infonce negatives must be gradient-free".into()));
        }
        let [n, d] = dims2(tz, "infonce z")?;
        if tt.shape != [n, d] {
            return Err(Error::Shape(format!("infonce: z {:?} vs target {:?}", tz.shape, tt.shape)));
        }
        let [m, dm] = dims2(tm, "infonce negatives")?;
        if dm != d {
            return Err(Error::Shape(format!(
                "infonce: negatives dim {dm} does not match embedding dim {d}"
            )));
        }
        let mut total = 0.0;
        for i in 0..n {
            let zr = &tz.data[i * d..(i + 1) * d];
            let tr = &tt.data[i * d..(i + 1) * d];
            let (nz, nt) = (norm(zr), norm(tr));
            if nz <= 1e-12 || nt <= 1e-12 {
                return Err(Error::InvalidInput(format!("infonce row {i}: zero-norm vector")));
            }
            // Normalize into explicit unit rows (not folded into the dot)
            // so values agree bit for bit with the scalar reference loss.
            let zn: Vec<f64> = zr.iter().map(|x| x / nz).collect();
            let tn: Vec<f64> = tr.iter().map(|x| x / nt).collect();
            let mut logits = Vec::with_capacity(m + 1);
            logits.push(dot(&zn, &tn) / tau);
            for j in 0..m {
                logits.push(dot(&zn, &tm.data[j * d..(j + 1) * d]) / tau);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - logits[0];
        }
        let out = Tensor::scalar(total / n as f64);
        self.push(Op::InfoNce(tau), vec![z, z_hat, negatives], out)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients;
    /// stop-gradient subtrees and constants end up with none.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::InvalidInput("backward: unknown node id".into()))?;
        if !node.value.is_scalar() {
            return Err(Error::InvalidInput(format!(
                "backward requires a scalar loss, got shape {:?}",
                node.value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if node.value.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
            for i in (0..=loss.0).rev() {
                if grads[i].is_none() {
                    continue;
                }
                let contribs = self.backprop_node(i, grads[i].as_ref().expect("checked above"));
                for (id, c) in contribs {
                    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; c.len()]);
                    for (o, v) in slot.iter_mut().zip(&c) {
                        *o += v;
                    }
                }
            }
        }
        let by_node = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape.clone(),
                    data,
                    requires_grad: false,
                })
            })
            .collect();
        Ok(Gradients { by_node })
    }

    /// Computes ∂loss/∂input for every differentiable input of node `i`,
    /// given ∂loss/∂node = `g`. Contributions come back as (input id,
    /// buffer) pairs and are summed by the caller, so an input used twice
    /// by one op (e.g. add(x,x)) accumulates both shares.
    fn backprop_node(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let needs = |id: NodeId| self.nodes[id.0].value.requires_grad;
        let fresh = |id: NodeId| vec![0.0; self.nodes[id.0].value.data.len()];
        let mut out: Vec<(NodeId, Vec<f64>)> = Vec::new();
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Add => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(a) {
                    out.push((a, g.to_vec()));
                }
                if needs(b) {
                    let mut gb = fresh(b);
                    let bl = gb.len().max(1);
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % bl] += gv;
                    }
                    out.push((b, gb));
                }
            }
            Op::Scale(s) => {
                let x = node.inputs[0];
                if needs(x) {
                    out.push((x, g.iter().map(|gv| s * gv).collect()));
                }
            }
            Op::WeightedSum(w) => {
                let x = node.inputs[0];
                if needs(x) {
                    out.push((x, w.iter().map(|wv| g[0] * wv).collect()));
                }
            }
            Op::Matmul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (n, k) = (ta.shape[0], ta.shape[1]);
                let m = tb.shape[1];
                if needs(a) {
                    let mut ga = fresh(a);
                    for i2 in 0..n {
                        let grow = &g[i2 * m..(i2 + 1) * m];
                        for p in 0..k {
                            ga[i2 * k + p] = dot(grow, &tb.data[p * m..(p + 1) * m]);
                        }
                    }
                    out.push((a, ga));
                }
                if needs(b) {
                    let mut gb = fresh(b);
                    for i2 in 0..n {
                        let grow = &g[i2 * m..(i2 + 1) * m];
                        for p in 0..k {
                            let av = ta.data[i2 * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[p * m..(p + 1) * m];
                            for (o, gv) in dst.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    out.push((b, gb));
                }
            }
            Op::Relu => {
                let x = node.inputs[0];
                if needs(x) {
                    let tx = &self.nodes[x.0].value;
                    let gx = g
                        .iter()
                        .zip(&tx.data)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    out.push((x, gx));
                }
            }
            Op::Tanh => {
                let x = node.inputs[0];
                if needs(x) {
                    let gx = g.iter().zip(&node.value.data).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    out.push((x, gx));
                }
            }
            Op::Concat(axis) => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let sa = &self.nodes[a.0].value.shape;
                let sb = &self.nodes[b.0].value.shape;
                let (outer, inner) = split_at_axis(sa, *axis);
                let (ea, eb) = (sa[*axis], sb[*axis]);
                let stride = (ea + eb) * inner;
                if needs(a) {
                    let mut ga = fresh(a);
                    for o in 0..outer {
                        ga[o * ea * inner..(o + 1) * ea * inner]
                            .copy_from_slice(&g[o * stride..o * stride + ea * inner]);
                    }
                    out.push((a, ga));
                }
                if needs(b) {
                    let mut gb = fresh(b);
                    for o in 0..outer {
                        gb[o * eb * inner..(o + 1) * eb * inner]
                            .copy_from_slice(&g[o * stride + ea * inner..(o + 1) * stride]);
                    }
                    out.push((b, gb));
                }
            }
            Op::Reshape => {
                let x = node.inputs[0];
                if needs(x) {
                    out.push((x, g.to_vec()));
                }
            }
            Op::Sum(axis) | Op::Mean(axis) => {
                let x = node.inputs[0];
                if needs(x) {
                    let tx = &self.nodes[x.0].value;
                    let (outer, inner) = split_at_axis(&tx.shape, *axis);
                    let e = tx.shape[*axis];
                    let w = if matches!(node.op, Op::Mean(_)) { 1.0 / e as f64 } else { 1.0 };
                    let mut gx = fresh(x);
                    for o in 0..outer {
                        let grow = &g[o * inner..(o + 1) * inner];
                        for k in 0..e {
                            let dst = &mut gx[(o * e + k) * inner..(o * e + k + 1) * inner];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += w * gv;
                            }
                        }
                    }
                    out.push((x, gx));
                }
            }
            Op::TemporalConv => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let tx = &self.nodes[x.0].value;
                let tw = &self.nodes[w.0].value;
                let (n, c, t, v) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
                let (kk, kt) = (tw.shape[0], tw.shape[2]);
                let pad = kt / 2;
                if needs(b) {
                    let mut gb = fresh(b);
                    for ni in 0..n {
                        for k in 0..kk {
                            gb[k] += g[(ni * kk + k) * t * v..(ni * kk + k + 1) * t * v].iter().sum::<f64>();
                        }
                    }
                    out.push((b, gb));
                }
                let mut gx = if needs(x) { Some(fresh(x)) } else { None };
                let mut gw = if needs(w) { Some(fresh(w)) } else { None };
                if gx.is_some() || gw.is_some() {
                    for ni in 0..n {
                        for k in 0..kk {
                            for ti in 0..t {
                                let gbase = ((ni * kk + k) * t + ti) * v;
                                let grow = &g[gbase..gbase + v];
                                for ci in 0..c {
                                    for dt in 0..kt {
                                        let tt = ti + dt;
                                        if tt < pad || tt - pad >= t {
                                            continue;
                                        }
                                        let xoff = ((ni * c + ci) * t + (tt - pad)) * v;
                                        let wv = tw.data[(k * c + ci) * kt + dt];
                                        if let Some(gx) = gx.as_deref_mut() {
                                            if wv != 0.0 {
                                                let dst = &mut gx[xoff..xoff + v];
                                                for (d, gv) in dst.iter_mut().zip(grow) {
                                                    *d += wv * gv;
                                                }
                                            }
                                        }
                                        if let Some(gw) = gw.as_deref_mut() {
                                            gw[(k * c + ci) * kt + dt] += dot(grow, &tx.data[xoff..xoff + v]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    out.push((x, gx));
                }
                if let Some(gw) = gw {
                    out.push((w, gw));
                }
            }
            Op::NeighborAgg => {
                let (x, adj) = (node.inputs[0], node.inputs[1]);
                let tx = &self.nodes[x.0].value;
                let ta = &self.nodes[adj.0].value;
                let v = *tx.shape.last().expect("4-d input");
                let slabs = tx.data.len() / v;
                if needs(x) {
                    let mut gx = fresh(x);
                    for slab in 0..slabs {
                        let grow = &g[slab * v..(slab + 1) * v];
                        let dst = &mut gx[slab * v..(slab + 1) * v];
                        for (vi, gv) in grow.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            let arow = &ta.data[vi * v..(vi + 1) * v];
                            for (d, av) in dst.iter_mut().zip(arow) {
                                *d += gv * av;
                            }
                        }
                    }
                    out.push((x, gx));
                }
                if needs(adj) {
                    let mut gadj = fresh(adj);
                    for slab in 0..slabs {
                        let grow = &g[slab * v..(slab + 1) * v];
                        let xrow = &tx.data[slab * v..(slab + 1) * v];
                        for (vi, gv) in grow.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            let dst = &mut gadj[vi * v..(vi + 1) * v];
                            for (d, xv) in dst.iter_mut().zip(xrow) {
                                *d += gv * xv;
                            }
                        }
                    }
                    out.push((adj, gadj));
                }
            }
            Op::ChannelMix => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let tx = &self.nodes[x.0].value;
                let tw = &self.nodes[w.0].value;
                let (n, c) = (tx.shape[0], tx.shape[1]);
                let tv = tx.shape[2] * tx.shape[3];
                let kk = tw.shape[0];
                if needs(b) {
                    let mut gb = fresh(b);
                    for ni in 0..n {
                        for k in 0..kk {
                            gb[k] += g[(ni * kk + k) * tv..(ni * kk + k + 1) * tv].iter().sum::<f64>();
                        }
                    }
                    out.push((b, gb));
                }
                if needs(x) {
                    let mut gx = fresh(x);
                    for ni in 0..n {
                        for k in 0..kk {
                            let grow = &g[(ni * kk + k) * tv..(ni * kk + k + 1) * tv];
                            for ci in 0..c {
                                let wv = tw.data[k * c + ci];
                                if wv == 0.0 {
                                    continue;
                                }
                                let dst = &mut gx[(ni * c + ci) * tv..(ni * c + ci + 1) * tv];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                    out.push((x, gx));
                }
                if needs(w) {
                    let mut gw = fresh(w);
                    for ni in 0..n {
                        for k in 0..kk {
                            let grow = &g[(ni * kk + k) * tv..(ni * kk + k + 1) * tv];
                            for ci in 0..c {
                                let xrow = &tx.data[(ni * c + ci) * tv..(ni * c + ci + 1) * tv];
                                gw[k * c + ci] += dot(grow, xrow);
                            }
                        }
                    }
                    out.push((w, gw));
                }
            }
            Op::L2NormRows => {
                let x = node.inputs[0];
                if needs(x) {
                    let tx = &self.nodes[x.0].value;
                    let d = tx.shape[1];
                    let mut gx = fresh(x);
                    for (i2, gv) in g.iter().enumerate() {
                        let row = &tx.data[i2 * d..(i2 + 1) * d];
                        let n2 = norm(row);
                        if n2 <= 0.0 {
                            continue;
                        }
                        let dst = &mut gx[i2 * d..(i2 + 1) * d];
                        for (o, xv) in dst.iter_mut().zip(row) {
                            *o += gv * xv / n2;
                        }
                    }
                    out.push((x, gx));
                }
            }
            Op::ExpMap0(c) => {
                let z = node.inputs[0];
                if needs(z) {
                    let tz = &self.nodes[z.0].value;
                    let d = tz.shape[1];
                    let s = c.get().sqrt();
                    let rho_max = (1.0 - geometry::EPS_BALL) * c.ball_radius();
                    let mut gz = fresh(z);
                    for i2 in 0..tz.shape[0] {
                        let zr = &tz.data[i2 * d..(i2 + 1) * d];
                        let go = &g[i2 * d..(i2 + 1) * d];
                        let dst = &mut gz[i2 * d..(i2 + 1) * d];
                        let r = norm(zr);
                        if r == 0.0 {
                            // tanh(√c·r)/(√c·r) → 1: the map is the identity
                            // to first order at the origin.
                            dst.copy_from_slice(go);
                            continue;
                        }
                        let u = s * r;
                        let t = u.tanh();
                        let zg = dot(zr, go);
                        if t > 1.0 - geometry::EPS_BALL {
                            // Clamped regime: output is ρmax·z/‖z‖, which
                            // only moves tangentially.
                            let k = rho_max / r;
                            for (j, (o, gv)) in dst.iter_mut().zip(go).enumerate() {
                                *o += k * (gv - zg * zr[j] / (r * r));
                            }
                        } else {
                            // d/dz [a(r)·z] = a·I + (a'(r)/r)·zzᵀ; the small-u
                            // series avoids the sech²−tanh cancellation.
                            let (a, apr_over_r) = if u < 1e-3 {
                                (
                                    1.0 - u * u / 3.0 + 2.0 * u.powi(4) / 15.0,
                                    s * s * (-2.0 / 3.0 + 8.0 * u * u / 15.0),
                                )
                            } else {
                                let sech2 = 1.0 - t * t;
                                (t / u, sech2 / (r * r) - t / (s * r * r * r))
                            };
                            for (j, (o, gv)) in dst.iter_mut().zip(go).enumerate() {
                                *o += a * gv + apr_over_r * zg * zr[j];
                            }
                        }
                    }
                    out.push((z, gz));
                }
            }
            Op::PoincareRowLoss => {
                let (h, hh) = (node.inputs[0], node.inputs[1]);
                let th = &self.nodes[h.0].value;
                let tt = &self.nodes[hh.0].value;
                let d = th.shape[1];
                let mut gh = if needs(h) { Some(fresh(h)) } else { None };
                let mut gt = if needs(hh) { Some(fresh(hh)) } else { None };
                for (i2, gv) in g.iter().enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let hr = &th.data[i2 * d..(i2 + 1) * d];
                    let tr = &tt.data[i2 * d..(i2 + 1) * d];
                    let q: f64 = hr.iter().zip(tr).map(|(a, b)| (a - b) * (a - b)).sum();
                    let a = 1.0 - dot(hr, hr);
                    let b = 1.0 - dot(tr, tr);
                    let arg = 1.0 + 2.0 * q / (a * b);
                    let denom = (arg * arg - 1.0).max(0.0).sqrt();
                    if denom <= 1e-12 {
                        // Coincident points: the minimum, where the descent
                        // direction is taken to be zero.
                        continue;
                    }
                    if let Some(gh) = gh.as_deref_mut() {
                        let coef = gv * 4.0 / (a * a * b * denom);
                        let dst = &mut gh[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += coef * ((hr[j] - tr[j]) * a + q * hr[j]);
                        }
                    }
                    if let Some(gt) = gt.as_deref_mut() {
                        let coef = gv * 4.0 / (a * b * b * denom);
                        let dst = &mut gt[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += coef * ((tr[j] - hr[j]) * b + q * tr[j]);
                        }
                    }
                }
                if let Some(gh) = gh {
                    out.push((h, gh));
                }
                if let Some(gt) = gt {
                    out.push((hh, gt));
                }
            }
            Op::CosineRowLoss => {
                let (h, hh) = (node.inputs[0], node.inputs[1]);
                let th = &self.nodes[h.0].value;
                let tt = &self.nodes[hh.0].value;
                let d = th.shape[1];
                let mut gh = if needs(h) { Some(fresh(h)) } else { None };
                let mut gt = if needs(hh) { Some(fresh(hh)) } else { None };
                for (i2, gv) in g.iter().enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let hr = &th.data[i2 * d..(i2 + 1) * d];
                    let tr = &tt.data[i2 * d..(i2 + 1) * d];
                    let (nh, nt) = (norm(hr), norm(tr));
                    let cos = dot(hr, tr) / (nh * nt);
                    if let Some(gh) = gh.as_deref_mut() {
                        let dst = &mut gh[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += gv * (cos * hr[j] / (nh * nh) - tr[j] / (nh * nt));
                        }
                    }
                    if let Some(gt) = gt.as_deref_mut() {
                        let dst = &mut gt[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += gv * (cos * tr[j] / (nt * nt) - hr[j] / (nh * nt));
                        }
                    }
                }
                if let Some(gh) = gh {
                    out.push((h, gh));
                }
                if let Some(gt) = gt {
                    out.push((hh, gt));
                }
            }
            Op::SoftmaxCrossEntropy(labels) => {
                let x = node.inputs[0];
                if needs(x) {
                    let tl = &self.nodes[x.0].value;
                    let (n, k) = (tl.shape[0], tl.shape[1]);
                    let scale = g[0] / n as f64;
                    let mut gx = fresh(x);
                    for i2 in 0..n {
                        let row = &tl.data[i2 * k..(i2 + 1) * k];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        let dst = &mut gx[i2 * k..(i2 + 1) * k];
                        for (j, o) in dst.iter_mut().enumerate() {
                            let p = (row[j] - max).exp() / sum;
                            let y = if labels[i2] == j { 1.0 } else { 0.0 };
                            *o += scale * (p - y);
                        }
                    }
                    out.push((x, gx));
                }
            }
            Op::InfoNce(tau) => {
                let (z, zh, neg) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let tz = &self.nodes[z.0].value;
                let tt = &self.nodes[zh.0].value;
                let tm = &self.nodes[neg.0].value;
                let (n, d) = (tz.shape[0], tz.shape[1]);
                let m = tm.shape[0];
                let scale = g[0] / n as f64;
                let mut gz = if needs(z) { Some(fresh(z)) } else { None };
                let mut gt = if needs(zh) { Some(fresh(zh)) } else { None };
                if gz.is_none() && gt.is_none() {
                    return out;
                }
                for i2 in 0..n {
                    let zr = &tz.data[i2 * d..(i2 + 1) * d];
                    let tr = &tt.data[i2 * d..(i2 + 1) * d];
                    let (nz, nt) = (norm(zr), norm(tr));
                    let zn: Vec<f64> = zr.iter().map(|x| x / nz).collect();
                    let tn: Vec<f64> = tr.iter().map(|x| x / nt).collect();
                    let mut logits = Vec::with_capacity(m + 1);
                    logits.push(dot(&zn, &tn) / tau);
                    for j in 0..m {
                        logits.push(dot(&zn, &tm.data[j * d..(j + 1) * d]) / tau);
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = logits.iter().map(|x| (x - max).exp()).sum();
                    let p: Vec<f64> = logits.iter().map(|x| (x - max).exp() / sum).collect();
                    if let Some(gz) = gz.as_deref_mut() {
                        // d loss/d zn, then through the normalization
                        // zn = z/‖z‖ via (I − zn znᵀ)/‖z‖.
                        let mut gzn = vec![0.0; d];
                        for j in 0..d {
                            gzn[j] = (p[0] - 1.0) * tn[j] / tau;
                        }
                        for (jm, pj) in p.iter().enumerate().skip(1) {
                            let mr = &tm.data[(jm - 1) * d..jm * d];
                            for j in 0..d {
                                gzn[j] += pj * mr[j] / tau;
                            }
                        }
                        let rad = dot(&zn, &gzn);
                        let dst = &mut gz[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += scale * (gzn[j] - rad * zn[j]) / nz;
                        }
                    }
                    if let Some(gt) = gt.as_deref_mut() {
                        // Only the positive logit depends on the target row.
                        let coef = (p[0] - 1.0) / tau;
                        let rad = coef * dot(&tn, &zn);
                        let dst = &mut gt[i2 * d..(i2 + 1) * d];
                        for (j, o) in dst.iter_mut().enumerate() {
                            *o += scale * (coef * zn[j] - rad * tn[j]) / nt;
                        }
                    }
                }
                if let Some(gz) = gz {
                    out.push((z, gz));
                }
                if let Some(gt) = gt {
                    out.push((zh, gt));
                }
            }
        }
        out
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.shape[..] {
        [a, b] => Ok([a, b]),
        _ => Err(Error::Shape(format!("{what} must be 2-d, got {:?}", t.shape))),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape[..] {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Shape(format!("{what} must be 4-d, got {:?}", t.shape))),
    }
}

/// Row-major split around one axis: product of extents before it and after it.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{self, NegativeQueue, Temperature};
    use crate::streams::{domain, stream};
    use rand::Rng;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::scalar(1.5).is_scalar());
        assert_eq!(Tensor::scalar(1.5).item().unwrap(), 1.5);
        assert!(t2(1, 2, &[1.0, 2.0]).item().is_err());
    }

    #[test]
    fn relu_and_matmul_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);

        let a = tape.leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t2(3, 1, &[1.0, 1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[6.0, 15.0]);

        let bad = tape.leaf(t2(2, 2, &[0.0; 4]));
        assert!(tape.matmul(a, bad).is_err());
    }

    #[test]
    fn sum_of_everything_grads_to_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, -0.5, 1.0]).unwrap());
        let s1 = tape.sum_axis(x, 1).unwrap();
        let s0 = tape.sum_axis(s1, 0).unwrap();
        assert!(tape.value(s0).is_scalar());
        let grads = tape.backward(s0).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn same_node_used_twice_accumulates_both_shares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum_axis(y, 0).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn stop_grad_blocks_exactly_and_only_its_path() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let y = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let frozen = tape.stop_grad(y);
        let sum = tape.add(x, frozen).unwrap();
        let s = tape.sum_axis(sum, 0).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0]);
        assert!(grads.wrt(y).is_none());

        // A frozen copy alongside the live path: only the live share counts.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let frozen = tape.stop_grad(x);
        let sum = tape.add(x, frozen).unwrap();
        let s = tape.sum_axis(sum, 0).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn broadcast_add_accumulates_bias_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Tensor::new(vec![2], vec![10.0, 20.0]).unwrap());
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let ws = tape.weighted_sum(y, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let grads = tape.backward(ws).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[4.0, 6.0]);

        let wrong = tape.leaf(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        assert!(tape.add(x, wrong).is_err());
    }

    #[test]
    fn concat_splits_gradient_by_slice() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 1, &[1.0, 2.0]));
        let b = tape.leaf(t2(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let cat = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 3]);
        assert_eq!(tape.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let ws = tape.weighted_sum(cat, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let grads = tape.backward(ws).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn mean_axis_example() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let m = tape.mean_axis(x, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let m2 = tape.mean_axis(m, 0).unwrap();
        assert_eq!(tape.value(m2).item().unwrap(), 4.0);
        let grads = tape.backward(m2).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn reshape_keeps_data_and_routes_gradients_through() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = tape.reshape(x, vec![3, 2]).unwrap();
        assert_eq!(tape.value(r).shape(), &[3, 2]);
        assert_eq!(tape.value(r).data(), tape.value(x).data());
        assert!(tape.reshape(x, vec![4, 2]).is_err());
        let ws = tape.weighted_sum(r, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let grads = tape.backward(ws).unwrap();
        assert_eq!(grads.wrt(x).unwrap().shape(), &[2, 3]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn exp_map0_rows_match_geometry_bit_for_bit() {
        let c = Curvature::default();
        let mut rng = stream(30, domain::GRADCHECK, 0, 0);
        let mut tape = Tape::new();
        let mut rows = Vec::new();
        // Includes interior, near-origin, and clamped rows plus an exact zero.
        for i in 0..40 {
            let scale = match i % 4 {
                0 => 0.3,
                1 => 1e-7,
                2 => 2.0,
                _ => 10.0,
            };
            let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            rows.push(row);
        }
        rows.push(vec![0.0; 8]);
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let z = tape.leaf(Tensor::new(vec![rows.len(), 8], flat).unwrap());
        let h = tape.exp_map0(z, c).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let direct = geometry::exp_map0(row, c).unwrap();
            assert_eq!(&tape.value(h).data()[i * 8..(i + 1) * 8], direct.coords());
        }
    }

    #[test]
    fn row_losses_match_reference_implementations() {
        let c = Curvature::default();
        let mut rng = stream(31, domain::GRADCHECK, 0, 0);
        let n = 50;
        let d = 6;
        let mut zs = Vec::new();
        let mut ts = Vec::new();
        for _ in 0..n * d {
            zs.push(rng.gen_range(-1.5..1.5));
            ts.push(rng.gen_range(-1.5..1.5));
        }
        let mut tape = Tape::new();
        let zl = tape.leaf(Tensor::new(vec![n, d], zs.clone()).unwrap());
        let tl = tape.leaf(Tensor::new(vec![n, d], ts.clone()).unwrap());
        let h = tape.exp_map0(zl, c).unwrap();
        let hh = tape.exp_map0(tl, c).unwrap();
        let poin = tape.poincare_loss(h, hh).unwrap();
        let cosd = tape.cosine_loss(h, hh).unwrap();
        for i in 0..n {
            let hp = geometry::exp_map0(&zs[i * d..(i + 1) * d], c).unwrap();
            let tp = geometry::exp_map0(&ts[i * d..(i + 1) * d], c).unwrap();
            assert_eq!(tape.value(poin).data()[i], geometry::poincare_loss(&hp, &tp).unwrap());
            assert_eq!(
                tape.value(cosd).data()[i],
                objectives::cosine_loss(hp.coords(), tp.coords()).unwrap()
            );
        }
    }

    #[test]
    fn infonce_op_matches_reference_loss() {
        let tau = 0.07;
        let mut rng = stream(32, domain::GRADCHECK, 0, 0);
        let (n, d, m) = (12, 5, 9);
        let zs: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ts: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut queue = NegativeQueue::new(m);
        for _ in 0..m {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            queue.push(&v).unwrap();
        }
        let negs: Vec<f64> = queue.iter().flat_map(|v| v.iter().cloned()).collect();

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![n, d], zs.clone()).unwrap());
        let t = tape.leaf(Tensor::new(vec![n, d], ts.clone()).unwrap());
        let t = tape.stop_grad(t);
        let nm = tape.constant(Tensor::new(vec![m, d], negs).unwrap());
        let loss = tape.infonce(z, t, nm, tau).unwrap();

        let temp = Temperature::new(tau).unwrap();
        let mut expect = 0.0;
        for i in 0..n {
            expect += objectives::infonce_loss(
                &zs[i * d..(i + 1) * d],
                &ts[i * d..(i + 1) * d],
                &queue,
                temp,
            )
            .unwrap();
        }
        expect /= n as f64;
        assert_eq!(tape.value(loss).item().unwrap(), expect);
    }

    #[test]
    fn infonce_rejects_differentiable_negatives() {
        let mut tape = Tape::new();
        let z = tape.leaf(t2(1, 2, &[1.0, 0.0]));
        let t = tape.leaf(t2(1, 2, &[1.0, 0.0]));
        let negs = tape.leaf(t2(1, 2, &[0.0, 1.0]));
        assert!(tape.infonce(z, t, negs, 0.07).is_err());
    }

    #[test]
    fn softmax_cross_entropy_examples() {
        let mut tape = Tape::new();
        // Uniform logits over K classes → ln K regardless of label.
        let l = tape.leaf(t2(1, 4, &[0.3, 0.3, 0.3, 0.3]));
        let loss = tape.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4.0_f64.ln()).abs() < 1e-14);

        // Two rows with hand-computed values.
        let l = tape.leaf(t2(2, 2, &[0.0, 0.0, 2.0, 0.0]));
        let loss = tape.softmax_cross_entropy(l, &[0, 0]).unwrap();
        let expect = (2.0_f64.ln() + (1.0 + (-2.0_f64).exp()).ln()) / 2.0;
        assert!((tape.value(loss).item().unwrap() - expect).abs() < 1e-14);

        // Gradient rows sum to zero (softmax minus one-hot).
        let grads = tape.backward(loss).unwrap();
        let gl = grads.wrt(l).unwrap();
        assert!((gl.data()[0] + gl.data()[1]).abs() < 1e-15);
        assert!((gl.data()[2] + gl.data()[3]).abs() < 1e-15);
        assert!(gl.data()[0] < 0.0); // true class pulled up

        assert!(tape.softmax_cross_entropy(l, &[0]).is_err());
        assert!(tape.softmax_cross_entropy(l, &[0, 9]).is_err());
    }

    #[test]
    fn non_finite_results_are_rejected_at_the_op() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![1e308]).unwrap());
        let doubled = tape.add(x, x);
        assert!(matches!(doubled, Err(Error::NonFinite(_))));
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let run = || {
            let mut rng = stream(33, domain::GRADCHECK, 1, 2);
            let x: Vec<f64> = (0..2 * 3 * 6 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..5 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let xl = tape.leaf(Tensor::new(vec![2, 3, 6, 4], x).unwrap());
            let wl = tape.leaf(Tensor::new(vec![5, 3, 3], w).unwrap());
            let bl = tape.leaf(Tensor::new(vec![5], b).unwrap());
            let y = tape.temporal_conv(xl, wl, bl).unwrap();
            let y = tape.tanh(y).unwrap();
            let m3 = tape.mean_axis(y, 3).unwrap();
            let m2 = tape.mean_axis(m3, 2).unwrap();
            let m1 = tape.sum_axis(m2, 1).unwrap();
            let loss = tape.sum_axis(m1, 0).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item().unwrap(),
                grads.wrt(xl).unwrap().data().to_vec(),
                grads.wrt(wl).unwrap().data().to_vec(),
            )
        };
        let (l1, gx1, gw1) = run();
        let (l2, gx2, gw2) = run();
        assert!(l1.to_bits() == l2.to_bits());
        assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn temporal_conv_identity_kernel_is_identity() {
        // Kernel (0,1,0) on a single channel copies the input.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 5, 2], (0..10).map(|i| i as f64).collect()).unwrap());
        let w = tape.leaf(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = tape.temporal_conv(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        // Even kernel widths have no center and are refused.
        let w2 = tape.leaf(Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap());
        assert!(tape.temporal_conv(x, w2, b).is_err());
    }

    #[test]
    fn neighbor_agg_identity_adjacency_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2, 3], (0..12).map(|i| i as f64).collect()).unwrap());
        let eye = tape.constant(Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let y = tape.neighbor_agg(x, eye).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let bad = tape.constant(Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap());
        assert!(tape.neighbor_agg(x, bad).is_err());
    }

    #[test]
    fn channel_mix_is_a_per_position_linear_map() {
        let mut tape = Tape::new();
        // One position, two channels: (x0,x1) ↦ (x0+2x1+1, 3x0−x1).
        let x = tape.leaf(Tensor::new(vec![1, 2, 1, 1], vec![5.0, 7.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let y = tape.channel_mix(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[20.0, 8.0]);
    }

    #[test]
    fn l2_norm_rows_example() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 2, &[3.0, 4.0, 0.0, 0.0]));
        let n = tape.l2_norm_rows(x).unwrap();
        assert_eq!(tape.value(n).data(), &[5.0, 0.0]);
        let s = tape.sum_axis(n, 0).unwrap();
        let grads = tape.backward(s).unwrap();
        // Zero row contributes zero gradient; the other is x/‖x‖.
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
