//! Compares reverse-mode gradients with central differences for a spatio-temporal
//! block and for body-part attention, in double precision.
//!
//!     cargo run --release --example grad_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agn::autograd::{grad_check, GradCheckOptions, ParamStore, Tensor};
use agn::nn::{bp_atn, graph_downsample, instance_norm, spatial_graph_conv, temporal_conv, AttentionWeights, FeatureMap, Topology};

fn store(specs: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = ParamStore::new();
    for (name, shape) in specs {
        let n = shape.iter().product();
        s.insert(name, Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())).unwrap();
    }
    s
}

fn main() -> agn::Result<()> {
    let topo = Topology::<f64>::ntu();
    let opts = GradCheckOptions::default();

    let s = store(&[("x", &[3, 8, 25]), ("gcn", &[4, 3]), ("tcn", &[4, 4, 3]), ("b", &[4]), ("gamma", &[4]), ("beta", &[4])]);
    let block = grad_check("gcn -> tcn -> norm -> pool", &s, |g, p| {
        let x = FeatureMap::new(p.get("x")?, 0);
        let h = spatial_graph_conv(g, &topo, x, p.get("gcn")?)?;
        let h = FeatureMap::new(g.leaky_relu(h.var, 0.2), 0);
        let h = temporal_conv(g, h, p.get("tcn")?, Some(p.get("b")?), 1)?;
        let h = instance_norm(g, &topo, h, Some((p.get("gamma")?, p.get("beta")?)))?;
        let h = graph_downsample(g, &topo, h)?;
        let sq = g.mul(h.var, h.var)?;
        Ok(g.sum(sq))
    }, &opts)?;

    let s = store(&[("x", &[4, 4, 5]), ("y", &[4, 4, 5]), ("q", &[3, 4]), ("k", &[3, 4]), ("v", &[4, 4])]);
    let attn = grad_check("bp_atn", &s, |g, p| {
        let w = AttentionWeights { q: p.get("q")?, k: p.get("k")?, v: p.get("v")? };
        let a = bp_atn(g, &topo, FeatureMap::new(p.get("x")?, 2), FeatureMap::new(p.get("y")?, 2), &w)?;
        let sq = g.mul(a.out.var, a.out.var)?;
        Ok(g.sum(sq))
    }, &opts)?;

    for r in [block, attn] {
        println!(
            "{:<28} {:>5} entries  max rel error {:.2e}  {}",
            r.label,
            r.checked,
            r.max_rel_error,
            if r.passes(1e-3) { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}
