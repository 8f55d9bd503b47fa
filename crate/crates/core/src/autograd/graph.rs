//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every op method evaluates eagerly and records enough state to push
//! gradients back in [`Graph::backward`]. Feature maps use the layout
//! `[channels, frames, nodes]`.

use std::sync::Arc;

use crate::error::{ensure, Error, Result};

use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for diagnostics and fault injection in gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Abs,
    LeakyRelu,
    Sum,
    Mean,
    ChannelMix,
    NodeMix,
    TemporalConv,
    ChannelBias,
    ChannelAffine,
    NodeBias,
    GroupNorm,
    GroupStats,
    GroupModulate,
    Downsample,
    Upsample,
    GatherNodes,
    ScatterNodes,
    Reshape,
    Transpose,
    MatMul,
    SoftmaxRows,
    AvgPool,
    MaxPool,
    CrossEntropy,
    L2Norm,
}

/// Partition of the node axis into groups (body parts, or one group for plain instance norm).
#[derive(Clone, Debug, PartialEq)]
pub struct Groups {
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Groups {
    pub fn new(group_of: Vec<usize>) -> Result<Self> {
        let count = group_of.iter().map(|g| g + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); count];
        for (v, &g) in group_of.iter().enumerate() {
            members[g].push(v);
        }
        if let Some(g) = members.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("group {g} has no nodes")));
        }
        Ok(Self { group_of, members })
    }

    /// A single group covering `nodes` nodes.
    pub fn single(nodes: usize) -> Self {
        Self::new(vec![0; nodes]).expect("non-empty single group")
    }

    pub fn node_count(&self) -> usize {
        self.group_of.len()
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Abs(Var),
    LeakyRelu(Var, S),
    Sum(Var),
    Mean(Var),
    ChannelMix { x: Var, w: Var },
    NodeMix { x: Var, adj: Arc<Vec<S>> },
    TemporalConv { x: Var, w: Var, stride: usize, cols: Vec<S> },
    ChannelBias { x: Var, b: Var },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    NodeBias { x: Var, b: Var },
    GroupNorm { x: Var, groups: Arc<Groups>, xhat: Vec<S>, inv_std: Vec<S> },
    GroupStats { x: Var, groups: Arc<Groups> },
    GroupModulate { x: Var, stats: Var, groups: Arc<Groups> },
    Downsample { x: Var, map: Arc<Vec<usize>> },
    Upsample { x: Var, map: Arc<Vec<usize>> },
    GatherNodes { x: Var, nodes: Arc<Vec<usize>> },
    ScatterNodes { parts: Vec<(Var, Arc<Vec<usize>>)> },
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    SoftmaxRows(Var),
    AvgPool(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    CrossEntropy { logits: Var, label: usize, probs: Vec<S> },
    L2Norm(Var),
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Abs(..) => OpKind::Abs,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::ChannelMix { .. } => OpKind::ChannelMix,
            Op::NodeMix { .. } => OpKind::NodeMix,
            Op::TemporalConv { .. } => OpKind::TemporalConv,
            Op::ChannelBias { .. } => OpKind::ChannelBias,
            Op::ChannelAffine { .. } => OpKind::ChannelAffine,
            Op::NodeBias { .. } => OpKind::NodeBias,
            Op::GroupNorm { .. } => OpKind::GroupNorm,
            Op::GroupStats { .. } => OpKind::GroupStats,
            Op::GroupModulate { .. } => OpKind::GroupModulate,
            Op::Downsample { .. } => OpKind::Downsample,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::GatherNodes { .. } => OpKind::GatherNodes,
            Op::ScatterNodes { .. } => OpKind::ScatterNodes,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Transpose(..) => OpKind::Transpose,
            Op::MatMul(..) => OpKind::MatMul,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::AvgPool(..) => OpKind::AvgPool,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::L2Norm(..) => OpKind::L2Norm,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Variance guard used by every normalisation op.
pub const NORM_EPS: f64 = 1e-5;

/// Recorded computation.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    fault: Option<OpKind>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every recorded value.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn fm_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, t, v] => Ok((*c, *t, *v)),
        _ => Err(Error::Argument(format!("expected [C, T, V] feature map, got {shape:?}"))),
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn acc_with<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize, f: impl FnOnce(&mut [S])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); len]);
    f(slot);
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Scales the backward pass of every op of `kind` by 1.5. Only for
    /// verifying that gradient checks catch broken derivatives.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn data(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value.data
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            Argument,
            "{what}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(&shape, data), op, ng)
    }

    fn map(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        self.map(
            x,
            |v| if v > S::zero() { v } else { v * slope },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, S::zero())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.data(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len().max(1);
        let s: S = self.data(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s / S::lit(n as f64)), Op::Mean(x), ng)
    }

    /// Mixes the leading (channel) axis: `w [C_out, C_in]`, `x [C_in, ...]` → `[C_out, ...]`.
    pub fn channel_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        ensure!(
            ws.len() == 2 && !xs.is_empty() && ws[1] == xs[0],
            Argument,
            "channel_mix: weight {ws:?} incompatible with input {xs:?}"
        );
        let (cout, cin) = (ws[0], ws[1]);
        let rest: usize = xs[1..].iter().product();
        let mut out = vec![S::zero(); cout * rest];
        gemm(cout, cin, rest, self.data(w), false, self.data(x), false, S::zero(), &mut out);
        let mut shape = xs;
        shape[0] = cout;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::new(&shape, out), Op::ChannelMix { x, w }, ng))
    }

    /// Right-multiplies the node axis by a fixed `V × V` operator.
    pub fn node_mix(&mut self, x: Var, adj: &Arc<Vec<S>>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let v = *xs.last().unwrap_or(&0);
        ensure!(
            v > 0 && adj.len() == v * v,
            Argument,
            "node_mix: operator of {} entries for {v} nodes",
            adj.len()
        );
        let rows = self.data(x).len() / v;
        let mut out = vec![S::zero(); rows * v];
        gemm(rows, v, v, self.data(x), false, adj, false, S::zero(), &mut out);
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&xs, out),
            Op::NodeMix {
                x,
                adj: Arc::clone(adj),
            },
            ng,
        ))
    }

    /// Convolution along frames with `w [C_out, C_in, K]`, zero padding `K/2`
    /// on both sides; output frames `ceil(T / stride)` for odd `K`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (cin, t, v) = fm_dims(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        ensure!(
            ws.len() == 3 && ws[1] == cin,
            Argument,
            "temporal_conv: weight {ws:?} incompatible with {cin} input channels"
        );
        ensure!(stride == 1 || stride == 2, Argument, "temporal_conv: stride {stride} not in {{1, 2}}");
        let (cout, k) = (ws[0], ws[2]);
        ensure!(t >= k, Argument, "temporal_conv: {t} frames < kernel {k}");
        let pad = k / 2;
        let tout = (t + 2 * pad - k) / stride + 1;
        let r = tout * v;
        let xd = self.data(x);
        let mut cols = vec![S::zero(); cin * k * r];
        for ci in 0..cin {
            for kk in 0..k {
                let row = &mut cols[(ci * k + kk) * r..(ci * k + kk + 1) * r];
                for to in 0..tout {
                    let ti = (to * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let src = &xd[(ci * t + ti as usize) * v..(ci * t + ti as usize + 1) * v];
                    row[to * v..(to + 1) * v].copy_from_slice(src);
                }
            }
        }
        let mut out = vec![S::zero(); cout * r];
        gemm(cout, cin * k, r, self.data(w), false, &cols, false, S::zero(), &mut out);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(
            Tensor::new(&[cout, tout, v], out),
            Op::TemporalConv { x, w, stride, cols },
            ng,
        ))
    }

    /// Adds `b [C]` along the channel axis.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure!(
            self.shape(b) == [xs[0]],
            Argument,
            "channel_bias: bias {:?} for input {xs:?}",
            self.shape(b)
        );
        let inner = self.data(x).len() / xs[0];
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i / inner])
            .collect();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::new(&xs, data), Op::ChannelBias { x, b }, ng))
    }

    /// `x·gamma[c] + beta[c]` along the channel axis.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure!(
            self.shape(gamma) == [xs[0]] && self.shape(beta) == [xs[0]],
            Argument,
            "channel_affine: parameters {:?}/{:?} for input {xs:?}",
            self.shape(gamma),
            self.shape(beta)
        );
        let inner = self.data(x).len() / xs[0];
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gd[i / inner] + bd[i / inner])
            .collect();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(Tensor::new(&xs, data), Op::ChannelAffine { x, gamma, beta }, ng))
    }

    /// Adds `b [C, V]` to every frame of `x [C, T, V]`.
    pub fn node_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c_n, t_n, v_n) = fm_dims(self.shape(x))?;
        ensure!(
            self.shape(b) == [c_n, v_n],
            Argument,
            "node_bias: bias {:?} for input [{c_n}, {t_n}, {v_n}]",
            self.shape(b)
        );
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / (t_n * v_n)) * v_n + i % v_n])
            .collect();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::new(&[c_n, t_n, v_n], data), Op::NodeBias { x, b }, ng))
    }

    fn check_groups(&self, x: Var, groups: &Groups, what: &str) -> Result<(usize, usize, usize)> {
        let (c, t, v) = fm_dims(self.shape(x))?;
        ensure!(
            groups.node_count() == v,
            Argument,
            "{what}: groups cover {} nodes, input has {v}",
            groups.node_count()
        );
        Ok((c, t, v))
    }

    /// Per (channel, group) standardisation over frames × group nodes.
    pub fn group_norm(&mut self, x: Var, groups: &Arc<Groups>) -> Result<Var> {
        let (c_n, t_n, v_n) = self.check_groups(x, groups, "group_norm")?;
        let g_n = groups.count();
        let eps = S::lit(NORM_EPS);
        let xd = self.data(x);
        let mut xhat = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); c_n * g_n];
        for c in 0..c_n {
            for g in 0..g_n {
                let members = groups.members(g);
                let n = S::lit((t_n * members.len()) as f64);
                let mut mean = S::zero();
                for t in 0..t_n {
                    for &v in members {
                        mean += xd[(c * t_n + t) * v_n + v];
                    }
                }
                mean /= n;
                let mut var = S::zero();
                for t in 0..t_n {
                    for &v in members {
                        let d = xd[(c * t_n + t) * v_n + v] - mean;
                        var += d * d;
                    }
                }
                var /= n;
                let inv = (var + eps).sqrt().recip();
                inv_std[c * g_n + g] = inv;
                for t in 0..t_n {
                    for &v in members {
                        let i = (c * t_n + t) * v_n + v;
                        xhat[i] = (xd[i] - mean) * inv;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[c_n, t_n, v_n], xhat.clone()),
            Op::GroupNorm {
                x,
                groups: Arc::clone(groups),
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Per (channel, group) mean and standard deviation `sqrt(var + eps)`, shape `[C, G, 2]`.
    pub fn group_stats(&mut self, x: Var, groups: &Arc<Groups>) -> Result<Var> {
        let (c_n, t_n, v_n) = self.check_groups(x, groups, "group_stats")?;
        let g_n = groups.count();
        let eps = S::lit(NORM_EPS);
        let xd = self.data(x);
        let mut out = vec![S::zero(); c_n * g_n * 2];
        for c in 0..c_n {
            for g in 0..g_n {
                let members = groups.members(g);
                let n = S::lit((t_n * members.len()) as f64);
                let mut mean = S::zero();
                for t in 0..t_n {
                    for &v in members {
                        mean += xd[(c * t_n + t) * v_n + v];
                    }
                }
                mean /= n;
                let mut var = S::zero();
                for t in 0..t_n {
                    for &v in members {
                        let d = xd[(c * t_n + t) * v_n + v] - mean;
                        var += d * d;
                    }
                }
                var /= n;
                out[(c * g_n + g) * 2] = mean;
                out[(c * g_n + g) * 2 + 1] = (var + eps).sqrt();
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[c_n, g_n, 2], out),
            Op::GroupStats {
                x,
                groups: Arc::clone(groups),
            },
            ng,
        ))
    }

    /// `x·std[c, g(v)] + mean[c, g(v)]` with statistics from [`Graph::group_stats`].
    pub fn group_modulate(&mut self, x: Var, stats: Var, groups: &Arc<Groups>) -> Result<Var> {
        let (c_n, t_n, v_n) = self.check_groups(x, groups, "group_modulate")?;
        let g_n = groups.count();
        ensure!(
            self.shape(stats) == [c_n, g_n, 2],
            Argument,
            "group_modulate: stats {:?}, expected [{c_n}, {g_n}, 2]",
            self.shape(stats)
        );
        let (xd, sd) = (self.data(x), self.data(stats));
        let gof = groups.group_of();
        let mut out = vec![S::zero(); xd.len()];
        for c in 0..c_n {
            for t in 0..t_n {
                for v in 0..v_n {
                    let i = (c * t_n + t) * v_n + v;
                    let s = (c * g_n + gof[v]) * 2;
                    out[i] = xd[i] * sd[s + 1] + sd[s];
                }
            }
        }
        let ng = self.ng(x) || self.ng(stats);
        Ok(self.push(
            Tensor::new(&[c_n, t_n, v_n], out),
            Op::GroupModulate {
                x,
                stats,
                groups: Arc::clone(groups),
            },
            ng,
        ))
    }

    /// Coarse node = mean of its members, frames averaged in pairs.
    pub fn downsample(&mut self, x: Var, map: &Arc<Vec<usize>>) -> Result<Var> {
        let (c_n, t_n, v_n) = fm_dims(self.shape(x))?;
        ensure!(map.len() == v_n, Argument, "downsample: map covers {} nodes, input has {v_n}", map.len());
        let vc = map.iter().map(|m| m + 1).max().unwrap_or(0);
        let mut count = vec![0usize; vc];
        for &m in map.iter() {
            count[m] += 1;
        }
        ensure!(count.iter().all(|&n| n > 0), Argument, "downsample: map is not surjective");
        let tc = t_n.div_ceil(2);
        let xd = self.data(x);
        let mut out = vec![S::zero(); c_n * tc * vc];
        for c in 0..c_n {
            for t in 0..t_n {
                let to = t / 2;
                let pair = if 2 * to + 1 < t_n { 2.0 } else { 1.0 };
                for v in 0..v_n {
                    let m = map[v];
                    out[(c * tc + to) * vc + m] +=
                        xd[(c * t_n + t) * v_n + v] / S::lit(pair * count[m] as f64);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[c_n, tc, vc], out),
            Op::Downsample {
                x,
                map: Arc::clone(map),
            },
            ng,
        ))
    }

    /// Fine node copies its coarse parent; frames repeated twice.
    pub fn upsample(&mut self, x: Var, map: &Arc<Vec<usize>>) -> Result<Var> {
        let (c_n, tc, vc) = fm_dims(self.shape(x))?;
        ensure!(
            map.iter().all(|&m| m < vc),
            Argument,
            "upsample: map refers past {vc} coarse nodes"
        );
        let (t_n, v_n) = (tc * 2, map.len());
        let xd = self.data(x);
        let mut out = vec![S::zero(); c_n * t_n * v_n];
        for c in 0..c_n {
            for t in 0..t_n {
                for v in 0..v_n {
                    out[(c * t_n + t) * v_n + v] = xd[(c * tc + t / 2) * vc + map[v]];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[c_n, t_n, v_n], out),
            Op::Upsample {
                x,
                map: Arc::clone(map),
            },
            ng,
        ))
    }

    /// Selects a subset of nodes: `[C, T, V]` → `[C, T, nodes.len()]`.
    pub fn gather_nodes(&mut self, x: Var, nodes: &Arc<Vec<usize>>) -> Result<Var> {
        let (c_n, t_n, v_n) = fm_dims(self.shape(x))?;
        ensure!(nodes.iter().all(|&v| v < v_n), Argument, "gather_nodes: node out of range");
        let n = nodes.len();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c_n * t_n * n);
        for ct in 0..c_n * t_n {
            out.extend(nodes.iter().map(|&v| xd[ct * v_n + v]));
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[c_n, t_n, n], out),
            Op::GatherNodes {
                x,
                nodes: Arc::clone(nodes),
            },
            ng,
        ))
    }

    /// Reassembles part feature maps whose node lists partition `0..V`.
    pub fn scatter_nodes(&mut self, parts: &[(Var, Arc<Vec<usize>>)]) -> Result<Var> {
        ensure!(!parts.is_empty(), Argument, "scatter_nodes: no parts");
        let (c_n, t_n, _) = fm_dims(self.shape(parts[0].0))?;
        let v_n: usize = parts.iter().map(|p| p.1.len()).sum();
        let mut covered = vec![false; v_n];
        for (p, nodes) in parts {
            let (c, t, n) = fm_dims(self.shape(*p))?;
            ensure!(
                c == c_n && t == t_n && n == nodes.len(),
                Argument,
                "scatter_nodes: part shape {:?} inconsistent",
                self.shape(*p)
            );
            for &v in nodes.iter() {
                ensure!(v < v_n && !covered[v], Argument, "scatter_nodes: parts do not partition nodes");
                covered[v] = true;
            }
        }
        let mut out = vec![S::zero(); c_n * t_n * v_n];
        for (p, nodes) in parts {
            let pd = self.data(*p);
            let n = nodes.len();
            for ct in 0..c_n * t_n {
                for (i, &v) in nodes.iter().enumerate() {
                    out[ct * v_n + v] = pd[ct * n + i];
                }
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(
            Tensor::new(&[c_n, t_n, v_n], out),
            Op::ScatterNodes {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        ensure!(
            shape.iter().product::<usize>() == self.data(x).len(),
            Argument,
            "reshape {:?} → {shape:?}",
            self.shape(x)
        );
        let data = self.data(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, data), Op::Reshape(x), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = match self.shape(x) {
            [m, n] => (*m, *n),
            s => return Err(Error::Argument(format!("transpose of shape {s:?}"))),
        };
        let xd = self.data(x);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xd[i * n + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[n, m], out), Op::Transpose(x), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return Err(Error::Argument(format!("matmul {sa:?} × {sb:?}"))),
        };
        let mut out = vec![S::zero(); m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, S::zero(), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out), Op::MatMul(a, b), ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = match self.shape(x) {
            [m, n] => (*m, *n),
            s => return Err(Error::Argument(format!("softmax_rows of shape {s:?}"))),
        };
        let xd = self.data(x);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            softmax_into(&xd[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[m, n], out), Op::SoftmaxRows(x), ng))
    }

    /// Mean over all but the leading axis.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).first().ok_or_else(|| Error::Argument("avg_pool of scalar".into()))?;
        let inner = self.data(x).len() / c;
        let xd = self.data(x);
        let out = (0..c)
            .map(|i| xd[i * inner..(i + 1) * inner].iter().copied().sum::<S>() / S::lit(inner as f64))
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[c], out), Op::AvgPool(x), ng))
    }

    /// Max over all but the leading axis; ties resolve to the first maximal index.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).first().ok_or_else(|| Error::Argument("max_pool of scalar".into()))?;
        let inner = self.data(x).len() / c;
        ensure!(inner > 0, Argument, "max_pool over empty axis");
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for i in 0..c {
            let row = &xd[i * inner..(i + 1) * inner];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(i * inner + best);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[c], out), Op::MaxPool { x, argmax }, ng))
    }

    /// `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let n = match self.shape(logits) {
            [n] => *n,
            s => return Err(Error::Argument(format!("cross_entropy of shape {s:?}"))),
        };
        ensure!(label < n, Argument, "label {label} >= {n} classes");
        let mut probs = vec![S::zero(); n];
        softmax_into(self.data(logits), &mut probs);
        let xd = self.data(logits);
        let max = xd.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + xd.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        let loss = lse - xd[label];
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            ng,
        ))
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().map(|&v| v * v).sum::<S>().sqrt();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::L2Norm(x), ng)
    }

    /// Gradients of the scalar `loss` with respect to every value that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        ensure!(
            self.data(loss).len() == 1,
            Argument,
            "backward from non-scalar of shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut dy) = grads[i].take() else { continue };
            if self.fault == Some(node.op.kind()) {
                let k = S::lit(1.5);
                dy.iter_mut().for_each(|g| *g *= k);
            }
            self.backward_node(node, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<S>, dy: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if ng(*a) {
                    acc(grads, *a, dy.to_vec());
                }
                if ng(*b) {
                    acc(grads, *b, dy.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if ng(*a) {
                    acc(grads, *a, dy.to_vec());
                }
                if ng(*b) {
                    acc(grads, *b, dy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if ng(*a) {
                    acc(grads, *a, dy.iter().zip(bd).map(|(&g, &y)| g * y).collect());
                }
                if ng(*b) {
                    acc(grads, *b, dy.iter().zip(ad).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale(x, c) => acc(grads, *x, dy.iter().map(|&g| g * *c).collect()),
            Op::AddScalar(x) => acc(grads, *x, dy.to_vec()),
            Op::Abs(x) => {
                let g = dy
                    .iter()
                    .zip(self.data(*x))
                    .map(|(&g, &v)| {
                        if v > S::zero() {
                            g
                        } else if v < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                acc(grads, *x, g);
            }
            Op::LeakyRelu(x, slope) => {
                let g = dy
                    .iter()
                    .zip(self.data(*x))
                    .map(|(&g, &v)| if v > S::zero() { g } else { g * *slope })
                    .collect();
                acc(grads, *x, g);
            }
            Op::Sum(x) => {
                let n = self.data(*x).len();
                acc(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.data(*x).len();
                acc(grads, *x, vec![dy[0] / S::lit(n.max(1) as f64); n]);
            }
            Op::ChannelMix { x, w } => {
                let ws = self.shape(*w);
                let (cout, cin) = (ws[0], ws[1]);
                let rest = self.data(*x).len() / cin;
                if ng(*w) {
                    acc_with(grads, *w, cout * cin, |g| {
                        gemm(cout, rest, cin, dy, false, self.data(*x), true, S::one(), g)
                    });
                }
                if ng(*x) {
                    acc_with(grads, *x, cin * rest, |g| {
                        gemm(cin, cout, rest, self.data(*w), true, dy, false, S::one(), g)
                    });
                }
            }
            Op::NodeMix { x, adj } => {
                let v = *self.shape(*x).last().unwrap();
                let rows = dy.len() / v;
                acc_with(grads, *x, rows * v, |g| {
                    gemm(rows, v, v, dy, false, adj, true, S::one(), g)
                });
            }
            Op::TemporalConv { x, w, stride, cols } => {
                let (cin, t, v) = fm_dims(self.shape(*x))?;
                let ws = self.shape(*w);
                let (cout, k) = (ws[0], ws[2]);
                let tout = node.value.shape[1];
                let r = tout * v;
                if ng(*w) {
                    acc_with(grads, *w, cout * cin * k, |g| {
                        gemm(cout, r, cin * k, dy, false, cols, true, S::one(), g)
                    });
                }
                if ng(*x) {
                    let mut dcols = vec![S::zero(); cin * k * r];
                    gemm(cin * k, cout, r, self.data(*w), true, dy, false, S::zero(), &mut dcols);
                    let pad = k / 2;
                    acc_with(grads, *x, cin * t * v, |g| {
                        for ci in 0..cin {
                            for kk in 0..k {
                                let row = &dcols[(ci * k + kk) * r..(ci * k + kk + 1) * r];
                                for to in 0..tout {
                                    let ti = (to * stride + kk) as isize - pad as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    let dst = &mut g[(ci * t + ti as usize) * v..(ci * t + ti as usize + 1) * v];
                                    for (d, &s) in dst.iter_mut().zip(&row[to * v..(to + 1) * v]) {
                                        *d += s;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::ChannelBias { x, b } => {
                if ng(*x) {
                    acc(grads, *x, dy.to_vec());
                }
                if ng(*b) {
                    let c = self.shape(*b)[0];
                    let inner = dy.len() / c;
                    let g = (0..c).map(|i| dy[i * inner..(i + 1) * inner].iter().copied().sum()).collect();
                    acc(grads, *b, g);
                }
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let c = self.shape(*gamma)[0];
                let inner = dy.len() / c;
                let gd = self.data(*gamma);
                if ng(*x) {
                    acc(grads, *x, dy.iter().enumerate().map(|(i, &g)| g * gd[i / inner]).collect());
                }
                if ng(*gamma) {
                    let xd = self.data(*x);
                    let g = (0..c)
                        .map(|i| (i * inner..(i + 1) * inner).map(|j| dy[j] * xd[j]).sum())
                        .collect();
                    acc(grads, *gamma, g);
                }
                if ng(*beta) {
                    let g = (0..c).map(|i| dy[i * inner..(i + 1) * inner].iter().copied().sum()).collect();
                    acc(grads, *beta, g);
                }
            }
            Op::NodeBias { x, b } => {
                if ng(*x) {
                    acc(grads, *x, dy.to_vec());
                }
                if ng(*b) {
                    let (c_n, t_n, v_n) = fm_dims(&node.value.shape)?;
                    let mut g = vec![S::zero(); c_n * v_n];
                    for (i, &d) in dy.iter().enumerate() {
                        g[(i / (t_n * v_n)) * v_n + i % v_n] += d;
                    }
                    acc(grads, *b, g);
                }
            }
            Op::GroupNorm {
                x,
                groups,
                xhat,
                inv_std,
            } => {
                let (c_n, t_n, v_n) = fm_dims(self.shape(*x))?;
                let g_n = groups.count();
                let mut dx = vec![S::zero(); dy.len()];
                for c in 0..c_n {
                    for g in 0..g_n {
                        let members = groups.members(g);
                        let n = S::lit((t_n * members.len()) as f64);
                        let (mut sum_dy, mut sum_dy_xh) = (S::zero(), S::zero());
                        for t in 0..t_n {
                            for &v in members {
                                let i = (c * t_n + t) * v_n + v;
                                sum_dy += dy[i];
                                sum_dy_xh += dy[i] * xhat[i];
                            }
                        }
                        let inv = inv_std[c * g_n + g];
                        for t in 0..t_n {
                            for &v in members {
                                let i = (c * t_n + t) * v_n + v;
                                dx[i] = inv / n * (n * dy[i] - sum_dy - xhat[i] * sum_dy_xh);
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::GroupStats { x, groups } => {
                let (c_n, t_n, v_n) = fm_dims(self.shape(*x))?;
                let g_n = groups.count();
                let (xd, st) = (self.data(*x), &node.value.data);
                let mut dx = vec![S::zero(); xd.len()];
                for c in 0..c_n {
                    for g in 0..g_n {
                        let members = groups.members(g);
                        let n = S::lit((t_n * members.len()) as f64);
                        let s = (c * g_n + g) * 2;
                        let (mean, std) = (st[s], st[s + 1]);
                        let d_mean = dy[s] / n;
                        let d_dev = dy[s + 1] / (std * n);
                        for t in 0..t_n {
                            for &v in members {
                                let i = (c * t_n + t) * v_n + v;
                                dx[i] = d_mean + d_dev * (xd[i] - mean);
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::GroupModulate { x, stats, groups } => {
                let (c_n, t_n, v_n) = fm_dims(self.shape(*x))?;
                let g_n = groups.count();
                let gof = groups.group_of();
                let (xd, sd) = (self.data(*x), self.data(*stats));
                if ng(*x) {
                    let mut dx = vec![S::zero(); xd.len()];
                    for c in 0..c_n {
                        for t in 0..t_n {
                            for v in 0..v_n {
                                let i = (c * t_n + t) * v_n + v;
                                dx[i] = dy[i] * sd[(c * g_n + gof[v]) * 2 + 1];
                            }
                        }
                    }
                    acc(grads, *x, dx);
                }
                if ng(*stats) {
                    let mut ds = vec![S::zero(); sd.len()];
                    for c in 0..c_n {
                        for t in 0..t_n {
                            for v in 0..v_n {
                                let i = (c * t_n + t) * v_n + v;
                                let s = (c * g_n + gof[v]) * 2;
                                ds[s] += dy[i];
                                ds[s + 1] += dy[i] * xd[i];
                            }
                        }
                    }
                    acc(grads, *stats, ds);
                }
            }
            Op::Downsample { x, map } => {
                let (c_n, t_n, v_n) = fm_dims(self.shape(*x))?;
                let (tc, vc) = (node.value.shape[1], node.value.shape[2]);
                let mut count = vec![0usize; vc];
                for &m in map.iter() {
                    count[m] += 1;
                }
                let mut dx = vec![S::zero(); c_n * t_n * v_n];
                for c in 0..c_n {
                    for t in 0..t_n {
                        let to = t / 2;
                        let pair = if 2 * to + 1 < t_n { 2.0 } else { 1.0 };
                        for v in 0..v_n {
                            let m = map[v];
                            dx[(c * t_n + t) * v_n + v] =
                                dy[(c * tc + to) * vc + m] / S::lit(pair * count[m] as f64);
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Upsample { x, map } => {
                let (c_n, tc, vc) = fm_dims(self.shape(*x))?;
                let (t_n, v_n) = (tc * 2, map.len());
                acc_with(grads, *x, c_n * tc * vc, |g| {
                    for c in 0..c_n {
                        for t in 0..t_n {
                            for v in 0..v_n {
                                g[(c * tc + t / 2) * vc + map[v]] += dy[(c * t_n + t) * v_n + v];
                            }
                        }
                    }
                });
            }
            Op::GatherNodes { x, nodes } => {
                let (c_n, t_n, v_n) = fm_dims(self.shape(*x))?;
                let n = nodes.len();
                acc_with(grads, *x, c_n * t_n * v_n, |g| {
                    for ct in 0..c_n * t_n {
                        for (i, &v) in nodes.iter().enumerate() {
                            g[ct * v_n + v] += dy[ct * n + i];
                        }
                    }
                });
            }
            Op::ScatterNodes { parts } => {
                let (c_n, t_n, v_n) = fm_dims(&node.value.shape)?;
                for (p, nodes) in parts {
                    if !ng(*p) {
                        continue;
                    }
                    let n = nodes.len();
                    let mut g = vec![S::zero(); c_n * t_n * n];
                    for ct in 0..c_n * t_n {
                        for (i, &v) in nodes.iter().enumerate() {
                            g[ct * n + i] = dy[ct * v_n + v];
                        }
                    }
                    acc(grads, *p, g);
                }
            }
            Op::Reshape(x) => acc(grads, *x, dy.to_vec()),
            Op::Transpose(x) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut g = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        g[i * n + j] = dy[j * m + i];
                    }
                }
                acc(grads, *x, g);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if ng(*a) {
                    acc_with(grads, *a, m * k, |g| {
                        gemm(m, n, k, dy, false, self.data(*b), true, S::one(), g)
                    });
                }
                if ng(*b) {
                    acc_with(grads, *b, k * n, |g| {
                        gemm(k, m, n, self.data(*a), true, dy, false, S::one(), g)
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.shape[1];
                let y = &node.value.data;
                let mut g = vec![S::zero(); y.len()];
                for (row, (yr, dr)) in g.chunks_mut(n).zip(y.chunks(n).zip(dy.chunks(n))) {
                    let dot: S = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yi), &di) in row.iter_mut().zip(yr).zip(dr) {
                        *o = yi * (di - dot);
                    }
                }
                acc(grads, *x, g);
            }
            Op::AvgPool(x) => {
                let c = dy.len();
                let inner = self.data(*x).len() / c;
                let scale = S::lit(inner as f64).recip();
                let g = (0..c * inner).map(|i| dy[i / inner] * scale).collect();
                acc(grads, *x, g);
            }
            Op::MaxPool { x, argmax } => {
                let len = self.data(*x).len();
                acc_with(grads, *x, len, |g| {
                    for (i, &j) in argmax.iter().enumerate() {
                        g[j] += dy[i];
                    }
                });
            }
            Op::CrossEntropy { logits, label, probs } => {
                let mut g: Vec<S> = probs.iter().map(|&p| p * dy[0]).collect();
                g[*label] -= dy[0];
                acc(grads, *logits, g);
            }
            Op::L2Norm(x) => {
                let n = node.value.data[0];
                if n > S::zero() {
                    let g = self.data(*x).iter().map(|&v| dy[0] * v / n).collect();
                    acc(grads, *x, g);
                }
            }
        }
        Ok(())
    }
}

fn softmax_into<S: Scalar>(x: &[S], out: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
