//! Spatio-temporal graph building blocks on top of the autograd tape.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Bound, Graph, Groups, ParamStore, Scalar, Var};
use crate::error::{ensure, Error, Result};
use crate::skeleton::hierarchy::{PoolingHierarchy, FEATURE_LEVELS};
use crate::skeleton::graph::normalized_adjacency;
use crate::skeleton::{build_hierarchy, SkeletonGraph};

/// Negative slope of every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// A `[C, T, V_l]` value on the tape together with its hierarchy level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    pub var: Var,
    pub level: usize,
}

impl FeatureMap {
    pub fn new(var: Var, level: usize) -> Self {
        Self { var, level }
    }
}

/// Graph operators of every feature level, converted to the working precision.
#[derive(Clone, Debug)]
pub struct Topology<S> {
    node_counts: Vec<usize>,
    adjacency: Vec<Arc<Vec<S>>>,
    down: Vec<Arc<Vec<usize>>>,
    parts: Vec<Arc<Groups>>,
    whole: Vec<Arc<Groups>>,
    part_nodes: Vec<Vec<Arc<Vec<usize>>>>,
}

impl<S: Scalar> Topology<S> {
    pub fn new(h: &PoolingHierarchy) -> Result<Self> {
        let mut t = Self {
            node_counts: Vec::new(),
            adjacency: Vec::new(),
            down: Vec::new(),
            parts: Vec::new(),
            whole: Vec::new(),
            part_nodes: Vec::new(),
        };
        for level in 0..FEATURE_LEVELS {
            let sl = h.spatial(level);
            t.node_counts.push(sl.node_count);
            t.adjacency
                .push(Arc::new(sl.normalized_adjacency.iter().map(|&a| S::lit(a)).collect()));
            let groups = Groups::new(sl.part_of.clone())?;
            t.part_nodes.push(
                (0..groups.count())
                    .map(|p| Arc::new(groups.members(p).to_vec()))
                    .collect(),
            );
            t.parts.push(Arc::new(groups));
            t.whole.push(Arc::new(Groups::single(sl.node_count)));
            if level + 1 < FEATURE_LEVELS {
                t.down.push(Arc::new(h.merge_map(level)?.to_vec()));
            }
        }
        Ok(t)
    }

    /// The standard 25-joint layout.
    pub fn ntu() -> Self {
        let h = build_hierarchy(&SkeletonGraph::ntu()).expect("built-in hierarchy is valid");
        Self::new(&h).expect("built-in hierarchy is valid")
    }

    /// A single level-0 graph with the given edges and part labels, for
    /// exercising blocks on small custom skeletons.
    pub fn single_level(nodes: usize, edges: &[(usize, usize)], part_of: Vec<usize>) -> Result<Self> {
        ensure!(part_of.len() == nodes, Config, "{} part labels for {nodes} nodes", part_of.len());
        let groups = Groups::new(part_of)?;
        Ok(Self {
            node_counts: vec![nodes],
            adjacency: vec![Arc::new(
                normalized_adjacency(nodes, edges).iter().map(|&a| S::lit(a)).collect(),
            )],
            down: Vec::new(),
            part_nodes: vec![(0..groups.count())
                .map(|p| Arc::new(groups.members(p).to_vec()))
                .collect()],
            parts: vec![Arc::new(groups)],
            whole: vec![Arc::new(Groups::single(nodes))],
        })
    }

    pub fn levels(&self) -> usize {
        self.node_counts.len()
    }

    pub fn node_count(&self, level: usize) -> usize {
        self.node_counts[level]
    }

    pub fn part_groups(&self, level: usize) -> &Arc<Groups> {
        &self.parts[level]
    }

    pub fn part_nodes(&self, level: usize) -> &[Arc<Vec<usize>>] {
        &self.part_nodes[level]
    }

    fn check(&self, g: &Graph<S>, x: FeatureMap, what: &str) -> Result<(usize, usize, usize)> {
        ensure!(x.level < self.levels(), Argument, "{what}: level {} out of range", x.level);
        match *g.shape(x.var) {
            [c, t, v] if v == self.node_counts[x.level] => Ok((c, t, v)),
            ref s => Err(Error::Argument(format!(
                "{what}: shape {s:?} does not fit level {} ({} nodes)",
                x.level, self.node_counts[x.level]
            ))),
        }
    }
}

/// `y[c_out, t, :] = Σ_c_in W[c_out, c_in] · x[c_in, t, :] · Ã`.
pub fn spatial_graph_conv<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    x: FeatureMap,
    w: Var,
) -> Result<FeatureMap> {
    topo.check(g, x, "spatial_graph_conv")?;
    let mixed = g.node_mix(x.var, &topo.adjacency[x.level])?;
    Ok(FeatureMap::new(g.channel_mix(mixed, w)?, x.level))
}

/// Convolution along frames with kernel `w [C_out, C_in, K]` and optional bias.
pub fn temporal_conv<S: Scalar>(
    g: &mut Graph<S>,
    x: FeatureMap,
    w: Var,
    b: Option<Var>,
    stride: usize,
) -> Result<FeatureMap> {
    let mut y = g.temporal_conv(x.var, w, stride)?;
    if let Some(b) = b {
        y = g.channel_bias(y, b)?;
    }
    Ok(FeatureMap::new(y, x.level))
}

/// Per-channel standardisation over frames × nodes, then `gamma·x + beta` if given.
pub fn instance_norm<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    x: FeatureMap,
    affine: Option<(Var, Var)>,
) -> Result<FeatureMap> {
    topo.check(g, x, "instance_norm")?;
    let mut y = g.group_norm(x.var, &topo.whole[x.level])?;
    if let Some((gamma, beta)) = affine {
        y = g.channel_affine(y, gamma, beta)?;
    }
    Ok(FeatureMap::new(y, x.level))
}

/// Gives `x` the statistics of `y` within every node group.
pub fn grouped_adain<S: Scalar>(
    g: &mut Graph<S>,
    x: FeatureMap,
    y: FeatureMap,
    groups: &Arc<Groups>,
) -> Result<FeatureMap> {
    ensure!(
        g.shape(x.var)[0] == g.shape(y.var)[0],
        Argument,
        "adain: {} content channels vs {} style channels",
        g.shape(x.var)[0],
        g.shape(y.var)[0]
    );
    let stats = g.group_stats(y.var, groups)?;
    let xn = g.group_norm(x.var, groups)?;
    Ok(FeatureMap::new(g.group_modulate(xn, stats, groups)?, x.level))
}

/// Adaptive instance normalisation with statistics over frames × all nodes.
pub fn adain<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    x: FeatureMap,
    y: FeatureMap,
) -> Result<FeatureMap> {
    topo.check(g, x, "adain")?;
    topo.check(g, y, "adain")?;
    grouped_adain(g, x, y, &topo.whole[x.level])
}

/// Adaptive instance normalisation applied separately within each body part.
pub fn bp_adain<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    x: FeatureMap,
    y: FeatureMap,
) -> Result<FeatureMap> {
    topo.check(g, x, "bp_adain")?;
    topo.check(g, y, "bp_adain")?;
    ensure!(x.level == y.level, Argument, "bp_adain: levels {} and {} differ", x.level, y.level);
    grouped_adain(g, x, y, &topo.parts[x.level])
}

/// Query, key and value projections of body-part attention.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Body-part attention output and the per-part attention matrices.
pub struct Attention {
    pub out: FeatureMap,
    pub maps: Vec<Var>,
}

/// Within each part, positions of `x` attend to positions of `y`; the result is added to `x`.
pub fn bp_atn<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    x: FeatureMap,
    y: FeatureMap,
    w: &AttentionWeights,
) -> Result<Attention> {
    let (c, t, _) = topo.check(g, x, "bp_atn")?;
    let (cy, ty, _) = topo.check(g, y, "bp_atn")?;
    ensure!(
        x.level == y.level && c == cy && t == ty,
        Argument,
        "bp_atn: {:?} at level {} vs {:?} at level {}",
        g.shape(x.var),
        x.level,
        g.shape(y.var),
        y.level
    );
    let d = g.shape(w.q)[0];
    let scale = S::lit(1.0 / (d as f64).sqrt());
    let mut pieces = Vec::new();
    let mut maps = Vec::new();
    for nodes in topo.part_nodes(x.level) {
        let n = t * nodes.len();
        let xp = g.gather_nodes(x.var, nodes)?;
        let yp = g.gather_nodes(y.var, nodes)?;
        let xf = g.reshape(xp, &[c, n])?;
        let yf = g.reshape(yp, &[c, n])?;
        let q = g.channel_mix(xf, w.q)?;
        let k = g.channel_mix(yf, w.k)?;
        let v = g.channel_mix(yf, w.v)?;
        let qt = g.transpose(q)?;
        let logits = g.matmul(qt, k)?;
        let logits = g.scale(logits, scale);
        let a = g.softmax_rows(logits)?;
        let at = g.transpose(a)?;
        let attended = g.matmul(v, at)?;
        let attended = g.reshape(attended, &[c, t, nodes.len()])?;
        let out = g.add(xp, attended)?;
        pieces.push((out, Arc::clone(nodes)));
        maps.push(a);
    }
    Ok(Attention {
        out: FeatureMap::new(g.scatter_nodes(&pieces)?, x.level),
        maps,
    })
}

/// Mean over merged nodes and over frame pairs; moves one level coarser.
pub fn graph_downsample<S: Scalar>(g: &mut Graph<S>, topo: &Topology<S>, x: FeatureMap) -> Result<FeatureMap> {
    ensure!(x.level + 1 < topo.levels(), Argument, "cannot downsample level {}", x.level);
    topo.check(g, x, "graph_downsample")?;
    Ok(FeatureMap::new(g.downsample(x.var, &topo.down[x.level])?, x.level + 1))
}

/// Copies each coarse node to its members and repeats frames; moves one level finer.
pub fn graph_upsample<S: Scalar>(g: &mut Graph<S>, topo: &Topology<S>, x: FeatureMap) -> Result<FeatureMap> {
    ensure!(
        (1..topo.levels()).contains(&x.level),
        Argument,
        "cannot upsample level {}",
        x.level
    );
    topo.check(g, x, "graph_upsample")?;
    Ok(FeatureMap::new(g.upsample(x.var, &topo.down[x.level - 1])?, x.level - 1))
}

/// Spatial graph convolution, LeakyReLU, temporal convolution with bias, LeakyReLU.
/// Expects `{prefix}.gcn.w`, `{prefix}.tcn.w` and `{prefix}.tcn.b`.
pub fn stgcn_unit<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    p: &Bound,
    prefix: &str,
    x: FeatureMap,
) -> Result<FeatureMap> {
    let slope = S::lit(LEAKY_SLOPE);
    let h = spatial_graph_conv(g, topo, x, p.get(&format!("{prefix}.gcn.w"))?)?;
    let h = FeatureMap::new(g.leaky_relu(h.var, slope), h.level);
    let h = temporal_conv(
        g,
        h,
        p.get(&format!("{prefix}.tcn.w"))?,
        Some(p.get(&format!("{prefix}.tcn.b"))?),
        1,
    )?;
    Ok(FeatureMap::new(g.leaky_relu(h.var, slope), h.level))
}

pub fn init_stgcn_unit<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.gcn.w"), &[cout, cin], cin, rng)?;
    store.insert_uniform(&format!("{prefix}.tcn.w"), &[cout, cout, kernel], cout * kernel, rng)?;
    store.insert_const(&format!("{prefix}.tcn.b"), &[cout], 0.0)
}

pub fn init_affine<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize) -> Result<()> {
    store.insert_const(&format!("{prefix}.gamma"), &[channels], 1.0)?;
    store.insert_const(&format!("{prefix}.beta"), &[channels], 0.0)
}

pub fn affine(p: &Bound, prefix: &str) -> Result<(Var, Var)> {
    Ok((p.get(&format!("{prefix}.gamma"))?, p.get(&format!("{prefix}.beta"))?))
}
