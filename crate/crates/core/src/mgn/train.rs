use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{value_and_grad, Adam, Graph};
use crate::error::{ensure, Error, Result};
use crate::skeleton::ActionSequence;

use super::loss::{batch_loss, l1, triplet_hinge, embedding, BatchPlan, LossParts, LossWeights, DEFAULT_DELTA};
use super::model::{MgnModel, Net};

/// Optimisation settings; keys match the training config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_rec: f64,
    pub lambda_cyc: f64,
    pub lambda_trip: f64,
    pub delta: f64,
    pub seed: u64,
    /// Optional cap on optimizer steps per epoch.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            epochs: 12,
            batch: 8,
            lr: 1e-3,
            lambda_rec: w.rec,
            lambda_cyc: w.cyc,
            lambda_trip: w.trip,
            delta: DEFAULT_DELTA,
            seed: 7,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rec: self.lambda_rec,
            cyc: self.lambda_cyc,
            trip: self.lambda_trip,
        }
    }
}

/// Losses after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's steps (`None` before training).
    pub train_loss: Option<f64>,
    pub monitor: LossParts,
    pub monitor_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_monitor: f64,
    pub final_monitor: f64,
    pub epochs: Vec<EpochLog>,
}

fn labels_of(seqs: &[ActionSequence]) -> Result<Vec<u32>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| s.label.ok_or_else(|| Error::Argument(format!("clip {i} has no label"))))
        .collect()
}

/// Splits a shuffled epoch into batches of same-class pairs, each anchor
/// getting its partner as positive, a different-class negative and a random transfer target.
pub fn plan_epoch(labels: &[u32], batch: usize, rng: &mut impl Rng) -> Result<Vec<BatchPlan>> {
    ensure!(batch >= 2, Argument, "batch size {batch} < 2");
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    ensure!(classes.len() >= 2, Sampling, "triplets need two classes, found {}", classes.len());

    let mut pairs = Vec::new();
    for &c in &classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        if members.len() % 2 == 1 {
            let extra = members[rng.gen_range(0..members.len())];
            members.push(extra);
        }
        pairs.extend(members.chunks(2).map(|p| (p[0], p[1])));
    }
    pairs.shuffle(rng);

    let mut plans = Vec::new();
    for chunk in pairs.chunks(batch.div_ceil(2)) {
        let mut items: Vec<usize> = chunk.iter().flat_map(|&(a, b)| [a, b]).collect();
        let anchors = items.len();
        let positive = (0..anchors).map(|i| i ^ 1).collect();
        let mut negative = Vec::with_capacity(anchors);
        for i in 0..anchors {
            let own = labels[items[i]];
            let inside: Vec<usize> = (0..anchors).filter(|&j| labels[items[j]] != own).collect();
            if let Some(&j) = inside.choose(rng) {
                negative.push(j);
            } else {
                let outside: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != own).collect();
                items.push(*outside.choose(rng).expect("two classes present"));
                negative.push(items.len() - 1);
            }
        }
        let target = (0..anchors)
            .map(|i| {
                if anchors == 1 {
                    0
                } else {
                    (i + rng.gen_range(1..anchors)) % anchors
                }
            })
            .collect();
        plans.push(BatchPlan {
            items,
            anchors,
            target,
            positive,
            negative,
        });
    }
    Ok(plans)
}

impl MgnModel {
    /// Objectives of one batch without computing gradients.
    pub fn evaluate_batch(
        &self,
        seqs: &[ActionSequence],
        plan: &BatchPlan,
        weights: &LossWeights,
        delta: f64,
    ) -> Result<LossParts> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: self.topology(), params: &p, config: &self.config };
        let inputs = plan
            .items
            .iter()
            .map(|&i| self.input(&mut g, &seqs[i]))
            .collect::<Result<Vec<_>>>()?;
        let l = batch_loss(&mut g, &net, &inputs, plan, weights, delta)?;
        Ok(LossParts {
            rec: g.value(l.rec).item() as f64,
            cyc: g.value(l.cyc).item() as f64,
            trip: g.value(l.trip).item() as f64,
        })
    }

    /// Mean absolute error between `m` and its self-transfer, in normalised coordinates.
    pub fn loss_rec(&self, m: &ActionSequence) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: self.topology(), params: &p, config: &self.config };
        let x = self.input(&mut g, m)?;
        let zs = net.encode_src(&mut g, x)?;
        let zt = net.encode_tgt(&mut g, x)?;
        let y = net.decode(&mut g, zs.deep(), zt.deep())?;
        let l = l1(&mut g, y, x)?;
        Ok(g.value(l).item() as f64)
    }

    /// Content and style terms of the cycle objective for one transfer.
    pub fn loss_cyc(&self, src: &ActionSequence, tgt: &ActionSequence) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let net = Net { topo: self.topology(), params: &p, config: &self.config };
        let xs = self.input(&mut g, src)?;
        let xt = self.input(&mut g, tgt)?;
        let zs = net.encode_src(&mut g, xs)?;
        let zt = net.encode_tgt(&mut g, xt)?;
        let gen = net.decode(&mut g, zs.deep(), zt.deep())?;
        let gs = net.encode_src(&mut g, gen)?;
        let gt = net.encode_tgt(&mut g, gen)?;
        let a = l1(&mut g, gs.deep().var, zs.deep().var)?;
        let b = l1(&mut g, gt.deep().var, zt.deep().var)?;
        Ok((g.value(a).item() as f64, g.value(b).item() as f64))
    }

    /// Hinge triplet objective on pooled content embeddings.
    pub fn loss_trip(&self, a: &ActionSequence, p: &ActionSequence, n: &ActionSequence, delta: f64) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let net = Net { topo: self.topology(), params: &b, config: &self.config };
        let mut e = Vec::new();
        for s in [a, p, n] {
            let x = self.input(&mut g, s)?;
            let z = net.encode_src(&mut g, x)?;
            e.push(embedding(&mut g, &z)?);
        }
        let l = triplet_hinge(&mut g, e[0], e[1], e[2], delta)?;
        Ok(g.value(l).item() as f64)
    }

    /// Pooled content embedding of a clip.
    pub fn content_embedding(&self, s: &ActionSequence) -> Result<Vec<f32>> {
        let z = self.encode_src(s)?;
        let d = z.deep();
        let c = d.shape[0];
        let inner = d.len() / c;
        Ok((0..c)
            .map(|i| d.data[i * inner..(i + 1) * inner].iter().sum::<f32>() / inner as f32)
            .collect())
    }
}

/// Trains all generator weights end to end with Adam.
///
/// `monitor` is a held-out set evaluated after every epoch with a fixed plan;
/// `on_epoch` runs after each epoch (checkpointing, logging) and may abort training.
pub fn train_mgn(
    model: &mut MgnModel,
    train: &[ActionSequence],
    monitor: &[ActionSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &MgnModel) -> Result<()>,
) -> Result<TrainReport> {
    let labels = labels_of(train)?;
    let mon_labels = labels_of(monitor)?;
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mon_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6f6e69746f72);
    let mon_plan = plan_epoch(&mon_labels, monitor.len().min(16), &mut mon_rng)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Sampling("empty monitoring set".into()))?;
    let adam = Adam::with_lr(cfg.lr);

    let mon = model.evaluate_batch(monitor, &mon_plan, &weights, cfg.delta)?;
    let first = EpochLog {
        epoch: 0,
        train_loss: None,
        monitor: mon,
        monitor_total: mon.total(&weights),
    };
    on_epoch(&first, model)?;
    let mut report = TrainReport {
        initial_monitor: first.monitor_total,
        final_monitor: first.monitor_total,
        epochs: vec![first],
    };

    for epoch in 1..=cfg.epochs {
        let mut plans = plan_epoch(&labels, cfg.batch, &mut rng)?;
        if let Some(cap) = cfg.steps_per_epoch {
            plans.truncate(cap);
        }
        let mut sum = 0.0;
        for plan in &plans {
            let (loss, grads) = value_and_grad(&model.params, |g, p| {
                let net = Net { topo: model.topology(), params: p, config: &model.config };
                let inputs = plan
                    .items
                    .iter()
                    .map(|&i| model.input(g, &train[i]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(batch_loss(g, &net, &inputs, plan, &weights, cfg.delta)?.total)
            })?;
            adam.step(&mut model.params, &grads)?;
            sum += loss as f64;
        }
        let mon = model.evaluate_batch(monitor, &mon_plan, &weights, cfg.delta)?;
        let log = EpochLog {
            epoch,
            train_loss: Some(sum / plans.len().max(1) as f64),
            monitor: mon,
            monitor_total: mon.total(&weights),
        };
        log::info!(
            "mgn epoch {epoch}: train {:.4} monitor {:.4} (rec {:.4} cyc {:.4} trip {:.4})",
            log.train_loss.unwrap_or(f64::NAN),
            log.monitor_total,
            mon.rec,
            mon.cyc,
            mon.trip
        );
        on_epoch(&log, model)?;
        report.final_monitor = log.monitor_total;
        report.epochs.push(log);
    }
    Ok(report)
}

