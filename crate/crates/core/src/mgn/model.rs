use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Bound, Checkpoint, Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::nn::blocks::{
    affine, bp_adain, bp_atn, graph_downsample, graph_upsample, init_affine, init_stgcn_unit,
    instance_norm, stgcn_unit, AttentionWeights, FeatureMap, Topology,
};
use crate::skeleton::graph::ntu;
use crate::skeleton::transform::bone_scale;
use crate::skeleton::ActionSequence;

/// Encoder blocks; the decoder has as many.
pub const BLOCKS: usize = 3;

/// Architecture of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgnConfig {
    /// Output channels of the three encoder blocks.
    pub channels: [usize; BLOCKS],
    pub kernel: usize,
    pub frames: usize,
    /// Query/key width of body-part attention.
    pub attn_dim: usize,
}

impl Default for MgnConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128],
            kernel: 9,
            frames: 64,
            attn_dim: 32,
        }
    }
}

impl MgnConfig {
    /// Small variant for gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: [4, 8, 16],
            kernel: 3,
            frames: 16,
            attn_dim: 4,
        }
    }

    fn encoder_io(&self, i: usize) -> (usize, usize) {
        let cin = if i == 0 { 3 } else { self.channels[i - 1] };
        (cin, self.channels[i])
    }

    /// Decoder block `i` runs at level `2 - i` with these channels.
    fn decoder_io(&self, i: usize) -> (usize, usize) {
        let c = self.channels;
        [(c[2], c[1]), (c[1], c[0]), (c[0], c[0])][i]
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels.iter().all(|&c| c > 0), Config, "channel counts must be positive");
        ensure!(self.kernel % 2 == 1, Config, "temporal kernel {} must be odd", self.kernel);
        ensure!(self.attn_dim > 0, Config, "attention width must be positive");
        ensure!(
            self.frames.is_multiple_of(8) && self.frames / 4 >= self.kernel,
            Config,
            "{} frames do not fit three halvings with kernel {}",
            self.frames,
            self.kernel
        );
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let k = self.kernel;
        for i in 0..BLOCKS {
            let (cin, cout) = self.encoder_io(i);
            init_affine(&mut s, &format!("src.{i}.in"), cin)?;
            init_stgcn_unit(&mut s, &format!("src.{i}"), cin, cout, k, &mut rng)?;
            init_stgcn_unit(&mut s, &format!("tgt.{i}"), cin, cout, k, &mut rng)?;
        }
        let deep = self.channels[BLOCKS - 1];
        let topo = Topology::<f32>::ntu();
        for i in 0..BLOCKS {
            let (cin, cout) = self.decoder_io(i);
            let level = BLOCKS - 1 - i;
            s.insert_const(&format!("dec.{i}.pos"), &[cin, topo.node_count(level)], 0.0)?;
            init_stgcn_unit(&mut s, &format!("dec.{i}"), cin, cout, k, &mut rng)?;
            s.insert_uniform(&format!("dec.{i}.map.w"), &[cout, deep], deep, &mut rng)?;
            s.insert_const(&format!("dec.{i}.map.b"), &[cout], 0.0)?;
        }
        let c_atn = self.decoder_io(0).1;
        s.insert_uniform("dec.atn.q", &[self.attn_dim, c_atn], c_atn, &mut rng)?;
        s.insert_uniform("dec.atn.k", &[self.attn_dim, c_atn], c_atn, &mut rng)?;
        s.insert_uniform("dec.atn.v", &[c_atn, c_atn], c_atn, &mut rng)?;
        s.insert_uniform("dec.head.w", &[3, self.channels[0]], self.channels[0], &mut rng)?;
        s.insert_const("dec.head.b", &[3], 0.0)?;
        Ok(s)
    }
}

/// `z¹, z², z³` of one encoder.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid {
    pub levels: [FeatureMap; BLOCKS],
}

impl Pyramid {
    pub fn deep(&self) -> FeatureMap {
        self.levels[BLOCKS - 1]
    }
}

/// Everything a forward pass needs besides the tape.
pub struct Net<'a, S: Scalar> {
    pub topo: &'a Topology<S>,
    pub params: &'a Bound,
    pub config: &'a MgnConfig,
}

impl<S: Scalar> Net<'_, S> {
    fn encode(&self, g: &mut Graph<S>, x: Var, prefix: &str, normalize: bool) -> Result<Pyramid> {
        let (c, t, v) = match *g.shape(x) {
            [c, t, v] => (c, t, v),
            ref s => return Err(Error::Argument(format!("encoder input of shape {s:?}"))),
        };
        ensure!(
            c == 3 && t == self.config.frames && v == self.topo.node_count(0),
            Argument,
            "encoder expects [3, {}, {}], got [{c}, {t}, {v}]",
            self.config.frames,
            self.topo.node_count(0)
        );
        let mut h = FeatureMap::new(x, 0);
        let mut levels = [h; BLOCKS];
        for (i, slot) in levels.iter_mut().enumerate() {
            let block = format!("{prefix}.{i}");
            if normalize {
                h = instance_norm(g, self.topo, h, Some(affine(self.params, &format!("{block}.in"))?))?;
            }
            h = stgcn_unit(g, self.topo, self.params, &block, h)?;
            h = graph_downsample(g, self.topo, h)?;
            *slot = h;
        }
        Ok(Pyramid { levels })
    }

    /// Content encoder: instance norm, ST-GCN unit and downsampling per block.
    pub fn encode_src(&self, g: &mut Graph<S>, x: Var) -> Result<Pyramid> {
        self.encode(g, x, "src", true)
    }

    /// Style encoder: ST-GCN unit and downsampling per block.
    pub fn encode_tgt(&self, g: &mut Graph<S>, x: Var) -> Result<Pyramid> {
        self.encode(g, x, "tgt", false)
    }

    /// Projects the deep target feature to the channels of decoder block `i` and unpools it to that block's level.
    pub fn target_map(&self, g: &mut Graph<S>, z_tgt: FeatureMap, i: usize) -> Result<FeatureMap> {
        let p = self.params;
        let y = g.channel_mix(z_tgt.var, p.get(&format!("dec.{i}.map.w"))?)?;
        let y = g.channel_bias(y, p.get(&format!("dec.{i}.map.b"))?)?;
        let mut y = FeatureMap::new(y, z_tgt.level);
        for _ in 0..=i {
            y = graph_upsample(g, self.topo, y)?;
        }
        Ok(y)
    }

    /// Decodes channel-major `[3, T, V]` joint positions from two deep latents.
    pub fn decode(&self, g: &mut Graph<S>, z_src: FeatureMap, z_tgt: FeatureMap) -> Result<Var> {
        let deep = BLOCKS;
        for z in [z_src, z_tgt] {
            let want = [self.config.channels[BLOCKS - 1], self.config.frames / 8, self.topo.node_count(deep)];
            ensure!(
                z.level == deep && g.shape(z.var) == want,
                Argument,
                "decoder latent {:?} at level {}, expected {want:?} at level {deep}",
                g.shape(z.var),
                z.level
            );
        }
        let p = self.params;
        let mut h = z_src;
        for i in 0..BLOCKS {
            h = graph_upsample(g, self.topo, h)?;
            h = FeatureMap::new(g.node_bias(h.var, p.get(&format!("dec.{i}.pos"))?)?, h.level);
            h = stgcn_unit(g, self.topo, p, &format!("dec.{i}"), h)?;
            let style = self.target_map(g, z_tgt, i)?;
            h = bp_adain(g, self.topo, h, style)?;
            if i == 0 {
                let w = AttentionWeights {
                    q: p.get("dec.atn.q")?,
                    k: p.get("dec.atn.k")?,
                    v: p.get("dec.atn.v")?,
                };
                h = bp_atn(g, self.topo, h, style, &w)?.out;
            }
        }
        let y = g.channel_mix(h.var, p.get("dec.head.w")?)?;
        g.channel_bias(y, p.get("dec.head.b")?)
    }
}

/// Deep features of one sequence, outside any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPyramid {
    pub levels: Vec<Tensor<f32>>,
}

impl LatentPyramid {
    pub fn deep(&self) -> &Tensor<f32> {
        self.levels.last().expect("three levels")
    }
}

/// Trained or freshly initialised motion generation network.
#[derive(Clone, Debug)]
pub struct MgnModel {
    pub config: MgnConfig,
    pub params: ParamStore<f32>,
    topo: Topology<f32>,
}

pub const MGN_KIND: &str = "mgn";

impl MgnModel {
    pub fn new(config: MgnConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self {
            config,
            params,
            topo: Topology::ntu(),
        })
    }

    pub fn topology(&self) -> &Topology<f32> {
        &self.topo
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint {
            meta: serde_json::json!({
                "kind": MGN_KIND,
                "config": serde_json::to_value(&self.config)?,
                "extra": extra,
            }),
            params: self.params.clone(),
        })
    }

    /// Rebuilds a model, checking every stored array against the configured schema.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ensure!(
            ck.meta["kind"] == MGN_KIND,
            Format,
            "checkpoint kind {} is not {MGN_KIND}",
            ck.meta["kind"]
        );
        let config: MgnConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let schema = config.init_params(0)?;
        check_schema(&schema, &ck.params)?;
        Ok(Self {
            config,
            params: ck.params,
            topo: Topology::ntu(),
        })
    }

    pub(crate) fn input(&self, g: &mut Graph<f32>, seq: &ActionSequence) -> Result<Var> {
        sequence_input(g, seq, self.config.frames)
    }

    fn pyramid_values(g: &Graph<f32>, p: &Pyramid) -> LatentPyramid {
        LatentPyramid {
            levels: p.levels.iter().map(|f| g.value(f.var).clone()).collect(),
        }
    }

    pub fn encode_src(&self, seq: &ActionSequence) -> Result<LatentPyramid> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: &self.topo, params: &p, config: &self.config };
        let x = self.input(&mut g, seq)?;
        let z = net.encode_src(&mut g, x)?;
        Ok(Self::pyramid_values(&g, &z))
    }

    pub fn encode_tgt(&self, seq: &ActionSequence) -> Result<LatentPyramid> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: &self.topo, params: &p, config: &self.config };
        let x = self.input(&mut g, seq)?;
        let z = net.encode_tgt(&mut g, x)?;
        Ok(Self::pyramid_values(&g, &z))
    }

    /// Decodes two deep latents into a clip in normalised coordinates.
    pub fn decode(&self, z_src: &Tensor<f32>, z_tgt: &Tensor<f32>) -> Result<ActionSequence> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: &self.topo, params: &p, config: &self.config };
        let a = FeatureMap::new(g.constant(z_src.clone()), BLOCKS);
        let b = FeatureMap::new(g.constant(z_tgt.clone()), BLOCKS);
        let y = net.decode(&mut g, a, b)?;
        output_sequence(&g, y, self.config.frames)
    }

    /// Motion of `src` performed by the skeleton of `tgt`, scaled to `tgt`'s mean bone length.
    pub fn generate(&self, src: &ActionSequence, tgt: &ActionSequence) -> Result<ActionSequence> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: &self.topo, params: &p, config: &self.config };
        let xs = self.input(&mut g, src)?;
        let xt = self.input(&mut g, tgt)?;
        let zs = net.encode_src(&mut g, xs)?;
        let zt = net.encode_tgt(&mut g, xt)?;
        let y = net.decode(&mut g, zs.deep(), zt.deep())?;
        let out = output_sequence(&g, y, self.config.frames)?;
        let (have, want) = (bone_scale(&out, &ntu::EDGES), bone_scale(tgt, &ntu::EDGES));
        if have > 1e-9 && want.is_finite() {
            Ok(out.map_affine(&[0.0; 3], want / have))
        } else {
            Ok(out)
        }
    }
}

/// Every array in `schema` must be present in `params` with the same shape, and nothing else.
pub(crate) fn check_schema<S: Scalar, T: Scalar>(schema: &ParamStore<S>, params: &ParamStore<T>) -> Result<()> {
    for (name, p) in schema.iter() {
        let q = params
            .get(name)
            .map_err(|_| Error::Format(format!("checkpoint lacks {name}")))?;
        ensure!(
            q.shape == p.shape,
            Format,
            "{name} has shape {:?}, model expects {:?}",
            q.shape,
            p.shape
        );
    }
    if let Some(extra) = params.names().find(|n| !schema.contains(n)) {
        return Err(Error::Format(format!("unexpected checkpoint entry {extra}")));
    }
    Ok(())
}

/// Channel-major constant for a `[T, 25, 3]` clip.
pub fn sequence_input<S: Scalar>(g: &mut Graph<S>, seq: &ActionSequence, frames: usize) -> Result<Var> {
    ensure!(
        seq.frames() == frames && seq.joints() == ntu::JOINTS && seq.channels() == 3,
        Argument,
        "clip of shape {:?}, expected ({frames}, {}, 3)",
        seq.shape(),
        ntu::JOINTS
    );
    Ok(g.constant(Tensor::from_f32(&[3, frames, ntu::JOINTS], &seq.to_channel_major())))
}

fn output_sequence(g: &Graph<f32>, y: Var, frames: usize) -> Result<ActionSequence> {
    let out = g.data(y);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("decoder output".into()));
    }
    ActionSequence::from_channel_major(3, frames, ntu::JOINTS, out)
}
