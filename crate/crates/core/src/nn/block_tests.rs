use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::*;
use crate::autograd::{Graph, Groups, Tensor, Var};
use crate::skeleton::graph::normalized_adjacency;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn identity(n: usize) -> Tensor<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = 1.0;
    }
    Tensor::new(&[n, n], d)
}

/// Per-channel (mean, std) over frames × `nodes`, with the engine's eps.
fn stats(data: &[f64], c_n: usize, t_n: usize, v_n: usize, nodes: &[usize]) -> Vec<(f64, f64)> {
    (0..c_n)
        .map(|c| {
            let vals: Vec<f64> = (0..t_n)
                .flat_map(|t| nodes.iter().map(move |&v| (t, v)))
                .map(|(t, v)| data[(c * t_n + t) * v_n + v])
                .collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            (m, (var + 1e-5).sqrt())
        })
        .collect()
}

#[test]
fn graph_conv_identity_on_edgeless_graph() {
    let topo = Topology::<f64>::single_level(4, &[], vec![0, 0, 0, 0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[3, 5, 4]));
    let w = g.constant(identity(3));
    let y = spatial_graph_conv(&mut g, &topo, FeatureMap::new(x, 0), w).unwrap();
    assert_eq!(g.data(y.var), g.data(x));
}

#[test]
fn graph_conv_constant_input_on_three_node_path() {
    let topo = Topology::<f64>::single_level(3, &[(0, 1), (1, 2)], vec![0, 0, 0]).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 2, 3], vec![1.0; 6]));
    let w = g.constant(Tensor::new(&[1, 1], vec![1.0]));
    let y = spatial_graph_conv(&mut g, &topo, FeatureMap::new(x, 0), w).unwrap();
    let r6 = 6f64.sqrt();
    let end = 0.5 + 1.0 / r6;
    let mid = 1.0 / 3.0 + 2.0 / r6;
    for (got, want) in g.data(y.var).iter().zip([end, mid, end, end, mid, end]) {
        assert!((got - want).abs() < 1e-12);
    }
}

fn dense_graph_conv(x: &[f64], w: &[f64], a: &[f64], cin: usize, cout: usize, t_n: usize, v_n: usize) -> Vec<f64> {
    let mut y = vec![0.0; cout * t_n * v_n];
    for co in 0..cout {
        for t in 0..t_n {
            for v in 0..v_n {
                let mut s = 0.0;
                for ci in 0..cin {
                    for u in 0..v_n {
                        s += w[co * cin + ci] * x[(ci * t_n + t) * v_n + u] * a[u * v_n + v];
                    }
                }
                y[(co * t_n + t) * v_n + v] = s;
            }
        }
    }
    y
}

fn check_graph_conv(v_n: usize, edges: &[(usize, usize)], rng: &mut ChaCha8Rng) {
    let topo = Topology::<f64>::single_level(v_n, edges, vec![0; v_n]).unwrap();
    let (cin, cout, t_n) = (2, 3, 4);
    let mut g = Graph::new();
    let x = g.constant(random(rng, &[cin, t_n, v_n]));
    let w = g.constant(random(rng, &[cout, cin]));
    let y = spatial_graph_conv(&mut g, &topo, FeatureMap::new(x, 0), w).unwrap();
    let a = normalized_adjacency(v_n, edges);
    let want = dense_graph_conv(g.data(x), g.data(w), &a, cin, cout, t_n, v_n);
    for (p, q) in g.data(y.var).iter().zip(&want) {
        assert!((p - q).abs() < 1e-12, "V={v_n} edges={edges:?}");
    }
}

#[test]
fn graph_conv_matches_dense_oracle_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // every simple graph on up to four nodes
    for v_n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..v_n)
            .flat_map(|i| (i + 1..v_n).map(move |j| (i, j)))
            .collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            check_graph_conv(v_n, &edges, &mut rng);
        }
    }
    for v_n in 5..=8usize {
        for _ in 0..40 {
            let edges: Vec<_> = (0..v_n)
                .flat_map(|i| (i + 1..v_n).map(move |j| (i, j)))
                .filter(|_| rng.gen_bool(0.4))
                .collect();
            check_graph_conv(v_n, &edges, &mut rng);
        }
    }
}

#[test]
fn graph_conv_rejects_wrong_node_count() {
    let topo = Topology::<f64>::ntu();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 9, 24]));
    let w = g.constant(identity(3));
    assert!(spatial_graph_conv(&mut g, &topo, FeatureMap::new(x, 0), w).is_err());
}

#[test]
fn temporal_conv_zero_and_averaging_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[2, 12, 3]));
    let zero = g.constant(Tensor::zeros(&[4, 2, 9]));
    let y = temporal_conv(&mut g, FeatureMap::new(x, 0), zero, None, 1).unwrap();
    assert!(g.data(y.var).iter().all(|&v| v == 0.0));

    let c = g.constant(Tensor::new(&[1, 12, 3], vec![2.5; 36]));
    let avg = g.constant(Tensor::new(&[1, 1, 9], vec![1.0 / 9.0; 9]));
    let y = temporal_conv(&mut g, FeatureMap::new(c, 0), avg, None, 1).unwrap();
    for t in 4..8 {
        for v in 0..3 {
            assert!((g.data(y.var)[t * 3 + v] - 2.5).abs() < 1e-12);
        }
    }
    let y2 = temporal_conv(&mut g, FeatureMap::new(c, 0), avg, None, 2).unwrap();
    assert_eq!(g.shape(y2.var), [1, 6, 3]);
    let short = g.constant(Tensor::zeros(&[1, 8, 3]));
    assert!(temporal_conv(&mut g, FeatureMap::new(short, 0), avg, None, 1).is_err());
}

#[test]
fn instance_norm_statistics() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let mut data = random(&mut rng, &[3, 16, 25]);
    for v in &mut data.data[2 * 400..] {
        *v = 7.0;
    }
    let x = g.constant(data);
    let y = instance_norm(&mut g, &topo, FeatureMap::new(x, 0), None).unwrap();
    let s = stats(g.data(y.var), 3, 16, 25, &(0..25).collect::<Vec<_>>());
    for &(m, sd) in &s[..2] {
        assert!(m.abs() < 1e-4 && ((sd * sd - 1e-5) - 1.0).abs() < 1e-4);
    }
    assert!(g.data(y.var)[800..].iter().all(|&v| v == 0.0));

    let gamma = g.constant(Tensor::new(&[3], vec![2.0; 3]));
    let beta = g.constant(Tensor::new(&[3], vec![3.0; 3]));
    let y = instance_norm(&mut g, &topo, FeatureMap::new(x, 0), Some((gamma, beta))).unwrap();
    let s = stats(g.data(y.var), 3, 16, 25, &(0..25).collect::<Vec<_>>());
    for &(m, sd) in &s[..2] {
        assert!((m - 3.0).abs() < 1e-3 && (sd - 2.0).abs() < 1e-3);
    }
}

#[test]
fn adain_self_transfer_and_target_statistics() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[4, 8, 10]));
    let mut yd = random(&mut rng, &[4, 8, 10]);
    for v in &mut yd.data {
        *v = 5.0 + 2.0 * 1.7 * *v;
    }
    let y = g.constant(yd);
    let (fx, fy) = (FeatureMap::new(x, 1), FeatureMap::new(y, 1));
    let same = adain(&mut g, &topo, fx, fx).unwrap();
    for (a, b) in g.data(same.var).iter().zip(g.data(x)) {
        assert!((a - b).abs() < 1e-5);
    }
    let out = adain(&mut g, &topo, fx, fy).unwrap();
    let all: Vec<usize> = (0..10).collect();
    let got = stats(g.data(out.var), 4, 8, 10, &all);
    let want = stats(g.data(y), 4, 8, 10, &all);
    for (a, b) in got.iter().zip(&want) {
        assert!((a.0 - b.0).abs() < 1e-4 && (a.1 - b.1).abs() < 1e-4);
    }
}

#[test]
fn adain_reaches_requested_moments() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let normal = |rng: &mut ChaCha8Rng| {
        let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let n = 64 * 25;
    let xd: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let yd: Vec<f64> = (0..n).map(|_| 5.0 + 2.0 * normal(&mut rng)).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 64, 25], xd));
    let y = g.constant(Tensor::new(&[1, 64, 25], yd));
    let out = adain(&mut g, &topo, FeatureMap::new(x, 0), FeatureMap::new(y, 0)).unwrap();
    let s = stats(g.data(out.var), 1, 64, 25, &(0..25).collect::<Vec<_>>());
    assert!((s[0].0 - 5.0).abs() < 0.1 && (s[0].1 - 2.0).abs() < 0.1);
}

#[test]
fn bp_adain_is_per_part_adain() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let xd = random(&mut rng, &[3, 8, 25]);
    let mut yd = xd.clone();
    let left_arm = topo.part_nodes(0)[1].clone();
    for c in 0..3 {
        for t in 0..8 {
            for &v in left_arm.iter() {
                yd.data[(c * 8 + t) * 25 + v] = 3.0 * yd.data[(c * 8 + t) * 25 + v] + 1.0;
            }
        }
    }
    let x = g.constant(xd);
    let y = g.constant(yd);
    let (fx, fy) = (FeatureMap::new(x, 0), FeatureMap::new(y, 0));
    let same = bp_adain(&mut g, &topo, fx, fx).unwrap();
    for (a, b) in g.data(same.var).iter().zip(g.data(x)) {
        assert!((a - b).abs() < 1e-5);
    }
    let out = bp_adain(&mut g, &topo, fx, fy).unwrap();
    for nodes in topo.part_nodes(0) {
        let xp = g.gather_nodes(x, nodes).unwrap();
        let yp = g.gather_nodes(y, nodes).unwrap();
        let single = Arc::new(Groups::single(nodes.len()));
        let want = grouped_adain(&mut g, FeatureMap::new(xp, 0), FeatureMap::new(yp, 0), &single).unwrap();
        let got = g.gather_nodes(out.var, nodes).unwrap();
        for (a, b) in g.data(got).iter().zip(g.data(want.var)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let one_part = Topology::<f64>::single_level(25, &[], vec![0; 25]).unwrap();
    let a = adain(&mut g, &one_part, fx, fy).unwrap();
    let b = bp_adain(&mut g, &one_part, fx, fy).unwrap();
    assert_eq!(g.data(a.var), g.data(b.var));
}

fn attention_weights(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, c: usize, d: usize) -> AttentionWeights {
    AttentionWeights {
        q: g.constant(random(rng, &[d, c])),
        k: g.constant(random(rng, &[d, c])),
        v: g.constant(random(rng, &[c, c])),
    }
}

#[test]
fn bp_atn_rows_are_distributions() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[6, 16, 5]));
    let y = g.constant(random(&mut rng, &[6, 16, 5]));
    let w = attention_weights(&mut g, &mut rng, 6, 4);
    let att = bp_atn(&mut g, &topo, FeatureMap::new(x, 2), FeatureMap::new(y, 2), &w).unwrap();
    assert_eq!(att.maps.len(), 5);
    for m in &att.maps {
        let n = g.shape(*m)[1];
        for row in g.data(*m).chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(g.shape(att.out.var), [6, 16, 5]);
}

#[test]
fn bp_atn_uniform_attention_adds_part_mean() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let (c, t) = (3, 4);
    let x = g.constant(random(&mut rng, &[c, t, 10]));
    let y = g.constant(random(&mut rng, &[c, t, 10]));
    let w = AttentionWeights {
        q: g.constant(Tensor::zeros(&[2, c])),
        k: g.constant(random(&mut rng, &[2, c])),
        v: g.constant(identity(c)),
    };
    let att = bp_atn(&mut g, &topo, FeatureMap::new(x, 1), FeatureMap::new(y, 1), &w).unwrap();
    let (xd, yd, od) = (g.data(x), g.data(y), g.data(att.out.var));
    for nodes in topo.part_nodes(1) {
        for ch in 0..c {
            let mean: f64 = (0..t)
                .flat_map(|tt| nodes.iter().map(move |&v| (tt, v)))
                .map(|(tt, v)| yd[(ch * t + tt) * 10 + v])
                .sum::<f64>()
                / (t * nodes.len()) as f64;
            for tt in 0..t {
                for &v in nodes.iter() {
                    let i = (ch * t + tt) * 10 + v;
                    assert!((od[i] - xd[i] - mean).abs() < 1e-12);
                }
            }
        }
    }

    let zero_y = g.constant(Tensor::zeros(&[c, t, 10]));
    let w0 = AttentionWeights {
        v: g.constant(Tensor::zeros(&[c, c])),
        ..w
    };
    let att = bp_atn(&mut g, &topo, FeatureMap::new(x, 1), FeatureMap::new(zero_y, 1), &w0).unwrap();
    assert_eq!(g.data(att.out.var), g.data(x));
}

#[test]
fn pooling_shapes_and_constants() {
    let topo = Topology::<f64>::ntu();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[2, 64, 25], vec![1.5; 3200]));
    let mut f = FeatureMap::new(x, 0);
    let mut shapes = Vec::new();
    for _ in 0..3 {
        f = graph_downsample(&mut g, &topo, f).unwrap();
        shapes.push(g.shape(f.var).to_vec());
        assert!(g.data(f.var).iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }
    assert_eq!(shapes, [vec![2, 32, 10], vec![2, 16, 5], vec![2, 8, 5]]);
    assert!(graph_downsample(&mut g, &topo, f).is_err());
    for _ in 0..3 {
        f = graph_upsample(&mut g, &topo, f).unwrap();
        assert!(g.data(f.var).iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }
    assert_eq!(g.shape(f.var), [2, 64, 25]);
    assert!(graph_upsample(&mut g, &topo, f).is_err());
}

#[test]
fn down_after_up_is_identity_on_parts() {
    let topo = Topology::<f64>::ntu();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[3, 4, 5]));
    let up = graph_upsample(&mut g, &topo, FeatureMap::new(x, 2)).unwrap();
    assert_eq!(up.level, 1);
    let down = graph_downsample(&mut g, &topo, up).unwrap();
    for (a, b) in g.data(down.var).iter().zip(g.data(x)) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn part_means(g: &Graph<f64>, v: Var, topo: &Topology<f64>, level: usize) -> Vec<f64> {
    let (c_n, t_n, v_n) = (g.shape(v)[0], g.shape(v)[1], g.shape(v)[2]);
    let mut out = Vec::new();
    for nodes in topo.part_nodes(level) {
        for c in 0..c_n {
            let mut s = 0.0;
            for t in 0..t_n {
                for &n in nodes.iter() {
                    s += g.data(v)[(c * t_n + t) * v_n + n];
                }
            }
            out.push(s / (t_n * nodes.len()) as f64);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adain_matches_style_statistics(seed in any::<u64>(), scale in 0.2f64..3.0, shift in -5.0f64..5.0) {
        let topo = Topology::<f64>::ntu();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[3, 8, 5]));
        let mut yd = random(&mut rng, &[3, 8, 5]);
        yd.data.iter_mut().for_each(|v| *v = *v * scale + shift);
        let y = g.constant(yd);
        let out = adain(&mut g, &topo, FeatureMap::new(x, 2), FeatureMap::new(y, 2)).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let got = stats(g.data(out.var), 3, 8, 5, &all);
        let want = stats(g.data(y), 3, 8, 5, &all);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a.0 - b.0).abs() < 1e-4);
            prop_assert!((a.1 - b.1).abs() < 1e-4);
        }
    }

    #[test]
    fn down_then_up_preserves_part_means(seed in any::<u64>(), level in 0usize..3) {
        let topo = Topology::<f64>::ntu();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[2, 8, topo.node_count(level)]));
        let d = graph_downsample(&mut g, &topo, FeatureMap::new(x, level)).unwrap();
        let u = graph_upsample(&mut g, &topo, d).unwrap();
        let before = part_means(&g, x, &topo, level);
        let after = part_means(&g, u.var, &topo, level);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
