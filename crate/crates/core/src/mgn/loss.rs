use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{ensure, Error, Result};

use super::model::{Net, Pyramid};

/// Relative weights of the three training objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub cyc: f64,
    pub trip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            cyc: 0.5,
            trip: 0.5,
        }
    }
}

/// Triplet margin.
pub const DEFAULT_DELTA: f64 = 5.0;

/// Values of the three objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rec: f64,
    pub cyc: f64,
    pub trip: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.rec * self.rec + w.cyc * self.cyc + w.trip * self.trip
    }
}

/// Mean absolute difference.
pub fn l1<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Global average pool of the deepest feature map.
pub fn embedding<S: Scalar>(g: &mut Graph<S>, z: &Pyramid) -> Result<Var> {
    g.avg_pool(z.deep().var)
}

/// `max(0, |a - p| - |a - n| + delta)`.
pub fn triplet_hinge<S: Scalar>(g: &mut Graph<S>, a: Var, p: Var, n: Var, delta: f64) -> Result<Var> {
    let ap = g.sub(a, p)?;
    let an = g.sub(a, n)?;
    let dp = g.l2_norm(ap);
    let dn = g.l2_norm(an);
    let diff = g.sub(dp, dn)?;
    let shifted = g.add_scalar(diff, S::lit(delta));
    Ok(g.relu(shifted))
}

/// Which clips form one training step.
///
/// The first `anchors` entries of `items` are reconstructed and transferred;
/// later entries only serve as triplet negatives. `target`, `positive` and
/// `negative` hold positions into `items`, one per anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub items: Vec<usize>,
    pub anchors: usize,
    pub target: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl BatchPlan {
    pub fn validate(&self, labels: &[u32]) -> Result<()> {
        let lab = |pos: usize| labels[self.items[pos]];
        ensure!(self.anchors > 0, Sampling, "batch without anchors");
        ensure!(
            self.target.len() == self.anchors
                && self.positive.len() == self.anchors
                && self.negative.len() == self.anchors,
            Sampling,
            "batch plan lists do not match {} anchors",
            self.anchors
        );
        for i in 0..self.anchors {
            let (t, p, n) = (self.target[i], self.positive[i], self.negative[i]);
            ensure!(
                t < self.anchors && p < self.items.len() && n < self.items.len(),
                Sampling,
                "batch plan refers past its items"
            );
            if lab(p) != lab(i) || lab(n) == lab(i) {
                return Err(Error::Sampling(format!("invalid triplet for anchor {i}")));
            }
        }
        Ok(())
    }
}

/// Per-step objectives on the tape, each averaged over anchors.
pub struct BatchLoss {
    pub total: Var,
    pub rec: Var,
    pub cyc: Var,
    pub trip: Var,
}

/// Builds reconstruction, cycle and triplet objectives for `inputs` (one per plan item).
pub fn batch_loss<S: Scalar>(
    g: &mut Graph<S>,
    net: &Net<'_, S>,
    inputs: &[Var],
    plan: &BatchPlan,
    weights: &LossWeights,
    delta: f64,
) -> Result<BatchLoss> {
    ensure!(inputs.len() == plan.items.len(), Argument, "{} inputs for {} plan items", inputs.len(), plan.items.len());
    let mut src = Vec::with_capacity(inputs.len());
    let mut emb = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let z = net.encode_src(g, x)?;
        emb.push(embedding(g, &z)?);
        src.push(z);
    }
    let tgt: Vec<Pyramid> = inputs[..plan.anchors]
        .iter()
        .map(|&x| net.encode_tgt(g, x))
        .collect::<Result<_>>()?;

    let (mut rec, mut cyc, mut trip) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..plan.anchors {
        let r = net.decode(g, src[i].deep(), tgt[i].deep())?;
        rec.push(l1(g, r, inputs[i])?);

        let t = plan.target[i];
        let gen = net.decode(g, src[i].deep(), tgt[t].deep())?;
        let zs = net.encode_src(g, gen)?;
        let zt = net.encode_tgt(g, gen)?;
        let a = l1(g, zs.deep().var, src[i].deep().var)?;
        let b = l1(g, zt.deep().var, tgt[t].deep().var)?;
        cyc.push(g.add(a, b)?);

        trip.push(triplet_hinge(g, emb[i], emb[plan.positive[i]], emb[plan.negative[i]], delta)?);
    }
    let scale = S::lit(1.0 / plan.anchors as f64);
    let avg = |g: &mut Graph<S>, terms: Vec<Var>| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t)?;
        }
        Ok(g.scale(acc, scale))
    };
    let rec = avg(g, rec)?;
    let cyc = avg(g, cyc)?;
    let trip = avg(g, trip)?;
    let a = g.scale(rec, S::lit(weights.rec));
    let b = g.scale(cyc, S::lit(weights.cyc));
    let c = g.scale(trip, S::lit(weights.trip));
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(BatchLoss { total, rec, cyc, trip })
}
