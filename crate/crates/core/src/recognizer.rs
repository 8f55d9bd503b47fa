//! ST-GCN action classifier: the task model of the active loop and the
//! feature extractor behind the motion distance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{value_and_grad, Adam, Bound, Checkpoint, Graph, ParamStore, Scalar, Var};
use crate::error::{ensure, Error, Result};
use crate::mgn::model::{check_schema, sequence_input};
use crate::nn::blocks::{
    affine, graph_downsample, init_affine, init_stgcn_unit, instance_norm, spatial_graph_conv,
    temporal_conv, FeatureMap, Topology, LEAKY_SLOPE,
};
use crate::skeleton::ActionSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerConfig {
    pub channels: [usize; 3],
    pub kernel: usize,
    pub frames: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128],
            kernel: 9,
            frames: 64,
        }
    }
}

impl RecognizerConfig {
    pub fn tiny() -> Self {
        Self {
            channels: [4, 8, 16],
            kernel: 3,
            frames: 16,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.channels[2]
    }

    pub fn init_params(&self, classes: usize, seed: u64) -> Result<ParamStore<f32>> {
        ensure!(classes >= 2, Config, "a classifier needs at least two classes, got {classes}");
        ensure!(self.kernel % 2 == 1, Config, "temporal kernel {} must be odd", self.kernel);
        ensure!(
            self.frames / 4 >= self.kernel,
            Config,
            "{} frames too short for kernel {} after two halvings",
            self.frames,
            self.kernel
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for i in 0..3 {
            let cin = if i == 0 { 3 } else { self.channels[i - 1] };
            let cout = self.channels[i];
            init_stgcn_unit(&mut s, &format!("rec.{i}"), cin, cout, self.kernel, &mut rng)?;
            init_affine(&mut s, &format!("rec.{i}.in"), cout)?;
        }
        let d = self.feature_dim();
        s.insert_uniform("rec.head.w", &[classes, d], d, &mut rng)?;
        s.insert_const("rec.head.b", &[classes], 0.0)?;
        Ok(s)
    }
}

/// Optimisation settings for one recognizer fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RecognizerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch: 16,
            lr: 2e-3,
            seed: 7,
        }
    }
}

/// Features after the global max-pool: `[C]`.
pub fn features<S: Scalar>(
    g: &mut Graph<S>,
    topo: &Topology<S>,
    p: &Bound,
    x: Var,
) -> Result<Var> {
    let slope = S::lit(LEAKY_SLOPE);
    let mut h = FeatureMap::new(x, 0);
    for i in 0..3 {
        let b = format!("rec.{i}");
        h = spatial_graph_conv(g, topo, h, p.get(&format!("{b}.gcn.w"))?)?;
        h = FeatureMap::new(g.leaky_relu(h.var, slope), h.level);
        h = temporal_conv(g, h, p.get(&format!("{b}.tcn.w"))?, Some(p.get(&format!("{b}.tcn.b"))?), 1)?;
        h = instance_norm(g, topo, h, Some(affine(p, &format!("{b}.in"))?))?;
        h = FeatureMap::new(g.leaky_relu(h.var, slope), h.level);
        h = graph_downsample(g, topo, h)?;
    }
    g.max_pool(h.var)
}

/// Class logits `[L]`.
pub fn logits<S: Scalar>(g: &mut Graph<S>, topo: &Topology<S>, p: &Bound, x: Var) -> Result<Var> {
    let f = features(g, topo, p, x)?;
    let f = g.reshape(f, &[g.shape(f)[0], 1])?;
    let y = g.matmul(p.get("rec.head.w")?, f)?;
    let y = g.reshape(y, &[g.shape(y)[0]])?;
    g.add(y, p.get("rec.head.b")?)
}

/// Softmax outputs, one row per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Most probable class of each row; ties go to the smallest index.
    pub fn argmax(&self) -> Vec<u32> {
        self.rows
            .iter()
            .map(|r| {
                let mut best = 0;
                for (i, &p) in r.iter().enumerate() {
                    if p > r[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RecognizerModel {
    pub config: RecognizerConfig,
    pub classes: usize,
    pub params: ParamStore<f32>,
    topo: Topology<f32>,
}

pub const RECOGNIZER_KIND: &str = "recognizer";

fn softmax64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl RecognizerModel {
    pub fn new(config: RecognizerConfig, classes: usize, seed: u64) -> Result<Self> {
        let params = config.init_params(classes, seed)?;
        Ok(Self {
            config,
            classes,
            params,
            topo: Topology::ntu(),
        })
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint {
            meta: serde_json::json!({
                "kind": RECOGNIZER_KIND,
                "config": serde_json::to_value(&self.config)?,
                "classes": self.classes,
                "extra": extra,
            }),
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ensure!(
            ck.meta["kind"] == RECOGNIZER_KIND,
            Format,
            "checkpoint kind {} is not {RECOGNIZER_KIND}",
            ck.meta["kind"]
        );
        let config: RecognizerConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let classes = ck.meta["classes"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint lacks class count".into()))? as usize;
        check_schema(&config.init_params(classes, 0)?, &ck.params)?;
        Ok(Self {
            config,
            classes,
            params: ck.params,
            topo: Topology::ntu(),
        })
    }

    fn eval(&self, seq: &ActionSequence, want_features: bool) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = sequence_input(&mut g, seq, self.config.frames)?;
        let out = if want_features {
            features(&mut g, &self.topo, &p, x)?
        } else {
            logits(&mut g, &self.topo, &p, x)?
        };
        let v = g.data(out).to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("recognizer output".into()));
        }
        Ok(v)
    }

    pub fn predict_proba(&self, seqs: &[ActionSequence]) -> Result<PredictionMatrix> {
        let rows = seqs
            .iter()
            .map(|s| self.eval(s, false).map(|l| softmax64(&l)))
            .collect::<Result<_>>()?;
        Ok(PredictionMatrix { rows })
    }

    /// Post-pool, pre-head activations, one row per clip.
    pub fn extract_features(&self, seqs: &[ActionSequence]) -> Result<Vec<Vec<f32>>> {
        seqs.iter().map(|s| self.eval(s, true)).collect()
    }

    /// Fraction of `seqs` whose most probable class equals their label.
    pub fn accuracy_on(&self, seqs: &[ActionSequence]) -> Result<f64> {
        let labels = labels_of(seqs)?;
        let pred = self.predict_proba(seqs)?;
        crate::metrics::accuracy(&pred, &labels)
    }
}

fn labels_of(seqs: &[ActionSequence]) -> Result<Vec<u32>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| s.label.ok_or_else(|| Error::Argument(format!("clip {i} has no label"))))
        .collect()
}

/// Fits a fresh recognizer with cross-entropy on labelled clips.
pub fn train_recognizer(
    data: &[ActionSequence],
    classes: usize,
    config: &RecognizerConfig,
    train: &RecognizerTrainConfig,
) -> Result<RecognizerModel> {
    let labels = labels_of(data)?;
    for c in 0..classes as u32 {
        ensure!(labels.contains(&c), Argument, "no training clip for class {c}");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Argument(format!("label {bad} outside {classes} classes")));
    }
    ensure!(train.batch > 0, Argument, "batch size must be positive");
    let mut model = RecognizerModel::new(config.clone(), classes, train.seed)?;
    let adam = Adam::with_lr(train.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x7265636f67);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(train.batch) {
            let (loss, grads) = value_and_grad(&model.params, |g, p| {
                let mut acc: Option<Var> = None;
                for &i in chunk {
                    let x = sequence_input(g, &data[i], config.frames)?;
                    let l = logits(g, &model.topo, p, x)?;
                    let ce = g.cross_entropy(l, labels[i] as usize)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, ce)?,
                        None => ce,
                    });
                }
                let sum = acc.expect("non-empty chunk");
                Ok(g.scale(sum, 1.0 / chunk.len() as f32))
            })?;
            adam.step(&mut model.params, &grads)?;
            total += loss as f64 * chunk.len() as f64;
        }
        log::debug!("recognizer epoch {}: loss {:.4}", epoch + 1, total / data.len() as f64);
    }
    Ok(model)
}
