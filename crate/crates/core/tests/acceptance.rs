//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `AGN_ACCEPT_ONLY=1,3,4` runs a subset. `AGN_ACCEPT_STRICT=1` turns any
//! FAIL into a non-zero exit; by default only panics and errors do.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agn::autograd::{grad_check, Bound, GradCheckOptions, Graph, ParamStore, Tensor, Var};
use agn::experiment::{
    class_preservation, random_transfers, scaling_curve, self_transfer_error, strategy_ablation, Corpus,
    RecognizerSetup, SeedSize,
};
use agn::metrics::{fmd, GaussianSummary};
use agn::mgn::loss::batch_loss;
use agn::mgn::{sequence_input, BatchPlan, LossWeights, MgnConfig, MgnModel, Net, TrainConfig};
use agn::nn::{
    adain, bp_adain, bp_atn, graph_downsample, graph_upsample, instance_norm, spatial_graph_conv, temporal_conv,
    AttentionWeights, FeatureMap, Topology,
};
use agn::recognizer::{logits, PredictionMatrix, RecognizerConfig, RecognizerModel};
use agn::skeleton::{normalize, synth_samples, ActionSequence, NormalizeOptions, SynthConfig};
use agn::umn::{uncertainty_score, LoopConfig, Strategy};

/// Held-out self-transfer error of the first green build was 0.223.
const SELF_TRANSFER_THRESHOLD: f64 = 0.30;
const GRAD_TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> agn::Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

// ---------------------------------------------------------------- 1

fn simplex_row(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let sparse = rng.gen_bool(0.2);
    let mut w: Vec<f64> = (0..l)
        .map(|_| if sparse && rng.gen_bool(0.5) { 0.0 } else { -rng.gen_range(1e-12f64..1.0).ln() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.gen_range(0..l)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn criterion_1() -> agn::Result<Outcome> {
    let cases: [(Vec<f64>, f64); 4] = [
        (vec![0.0, 1.0, 0.0, 0.0], 0.0),
        (vec![0.7, 0.1, 0.1, 0.1], 0.3),
        (vec![0.5, 0.5, 0.0], 0.875),
        (vec![0.2; 5], 1.0),
    ];
    let mut worst = 0.0f64;
    for (row, want) in &cases {
        let got = uncertainty_score(&PredictionMatrix { rows: vec![row.clone()] })?.values[0];
        worst = worst.max((got - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..10_000).map(|_| {
        let l = rng.gen_range(2..=10);
        simplex_row(&mut rng, l)
    }).collect();
    let scores = uncertainty_score(&PredictionMatrix { rows })?;
    let outside = scores.values.iter().filter(|s| !(0.0..=1.0).contains(*s)).count();
    outcome(
        worst <= 1e-9 && outside == 0,
        format!("worked cases max error {worst:.1e}, {outside}/10000 random rows outside [0,1]"),
    )
}

// ---------------------------------------------------------------- 2

fn random_store(specs: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in specs {
        let n = shape.iter().product();
        s.insert(name, Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())).unwrap();
    }
    s
}

/// Fixed uneven weighting so every output entry reaches the loss.
fn probe(g: &mut Graph<f64>, y: Var) -> agn::Result<Var> {
    let shape = g.shape(y).to_vec();
    let n = g.data(y).len();
    let w = g.constant(Tensor::new(&shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect()));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn tiny_clips(frames: usize, classes: u32, per_class: usize) -> Vec<ActionSequence> {
    let cfg = SynthConfig { classes, samples_per_class: per_class, skeleton_styles: 4, frames, test_fraction: 0.0, seed: 3 };
    synth_samples(&cfg)
        .unwrap()
        .into_iter()
        .map(|s| normalize(&s.sequence, &NormalizeOptions::ntu()).unwrap())
        .collect()
}

fn criterion_2() -> agn::Result<Outcome> {
    let topo = Topology::<f64>::ntu();
    let opts = GradCheckOptions::default();
    let mut reports = Vec::new();
    let fm = |p: &Bound, name: &str, level: usize| p.get(name).map(|v| FeatureMap::new(v, level));

    let s = random_store(&[("x", &[3, 6, 25]), ("w", &[4, 3])], 1);
    reports.push(grad_check("spatial_graph_conv", &s, |g, p| {
        let y = spatial_graph_conv(g, &topo, fm(p, "x", 0)?, p.get("w")?)?;
        probe(g, y.var)
    }, &opts)?);

    let s = random_store(&[("x", &[3, 8, 5]), ("w", &[2, 3, 3]), ("b", &[2])], 2);
    for stride in [1, 2] {
        reports.push(grad_check(&format!("temporal_conv stride {stride}"), &s, |g, p| {
            let y = temporal_conv(g, fm(p, "x", 2)?, p.get("w")?, Some(p.get("b")?), stride)?;
            probe(g, y.var)
        }, &opts)?);
    }

    let s = random_store(&[("x", &[2, 6, 10]), ("gamma", &[2]), ("beta", &[2])], 3);
    reports.push(grad_check("instance_norm", &s, |g, p| {
        let y = instance_norm(g, &topo, fm(p, "x", 1)?, Some((p.get("gamma")?, p.get("beta")?)))?;
        probe(g, y.var)
    }, &opts)?);

    let s = random_store(&[("x", &[2, 4, 25]), ("y", &[2, 4, 25])], 4);
    reports.push(grad_check("adain", &s, |g, p| {
        let y = adain(g, &topo, fm(p, "x", 0)?, fm(p, "y", 0)?)?;
        probe(g, y.var)
    }, &opts)?);
    reports.push(grad_check("bp_adain", &s, |g, p| {
        let y = bp_adain(g, &topo, fm(p, "x", 0)?, fm(p, "y", 0)?)?;
        probe(g, y.var)
    }, &opts)?);

    let s = random_store(&[("x", &[3, 4, 5]), ("y", &[3, 4, 5]), ("q", &[2, 3]), ("k", &[2, 3]), ("v", &[3, 3])], 5);
    reports.push(grad_check("bp_atn", &s, |g, p| {
        let w = AttentionWeights { q: p.get("q")?, k: p.get("k")?, v: p.get("v")? };
        let a = bp_atn(g, &topo, fm(p, "x", 2)?, fm(p, "y", 2)?, &w)?;
        probe(g, a.out.var)
    }, &opts)?);

    let s = random_store(&[("x0", &[2, 8, 25]), ("x1", &[2, 4, 10])], 6);
    reports.push(grad_check("graph_downsample", &s, |g, p| {
        let y = graph_downsample(g, &topo, fm(p, "x0", 0)?)?;
        probe(g, y.var)
    }, &opts)?);
    reports.push(grad_check("graph_upsample", &s, |g, p| {
        let y = graph_upsample(g, &topo, fm(p, "x1", 1)?)?;
        probe(g, y.var)
    }, &opts)?);

    let model_opts = GradCheckOptions { max_entries_per_param: Some(2), step: 1e-6, ..Default::default() };
    let mcfg = MgnConfig::tiny();
    let store = mcfg.init_params(5)?.cast::<f64>();
    let c = tiny_clips(mcfg.frames, 2, 2);
    let plan = BatchPlan { items: vec![0, 1, 2, 3], anchors: 2, target: vec![1, 0], positive: vec![1, 0], negative: vec![2, 3] };
    reports.push(grad_check("mgn total loss", &store, |g, p| {
        let net = Net { topo: &topo, params: p, config: &mcfg };
        let inputs = c.iter().map(|s| sequence_input(g, s, mcfg.frames)).collect::<agn::Result<Vec<_>>>()?;
        Ok(batch_loss(g, &net, &inputs, &plan, &LossWeights::default(), 5.0)?.total)
    }, &model_opts)?);

    let rcfg = RecognizerConfig::tiny();
    let store = rcfg.init_params(3, 4)?.cast::<f64>();
    let c = tiny_clips(rcfg.frames, 3, 1);
    reports.push(grad_check("recognizer cross-entropy", &store, |g, p| {
        let mut total = None;
        for (i, s) in c.iter().enumerate() {
            let x = sequence_input(g, s, rcfg.frames)?;
            let l = logits(g, &topo, p, x)?;
            let ce = g.cross_entropy(l, i)?;
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        Ok(total.expect("three clips"))
    }, &model_opts)?);

    let failing: Vec<String> = reports
        .iter()
        .filter(|r| !r.passes(GRAD_TOL))
        .map(|r| format!("{} ({:.1e})", r.label, r.max_rel_error))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let detail = if failing.is_empty() {
        format!("{} checks, worst relative error {worst:.1e}", reports.len())
    } else {
        format!("failing: {}", failing.join(", "))
    };
    outcome(failing.is_empty(), detail)
}

// ---------------------------------------------------------------- 3

fn channel_moments(data: &[f64], c_n: usize) -> Vec<(f64, f64)> {
    let per = data.len() / c_n;
    data.chunks(per)
        .map(|ch| {
            let m = ch.iter().sum::<f64>() / per as f64;
            let var = ch.iter().map(|x| (x - m).powi(2)).sum::<f64>() / per as f64;
            (m, (var + 1e-5).sqrt())
        })
        .collect()
}

fn criterion_3() -> agn::Result<Outcome> {
    let topo = Topology::<f64>::ntu();
    let one_part = Topology::<f64>::single_level(25, &[], vec![0; 25])?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, t, v) = (4, 16, 25);
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for _ in 0..100 {
        let x: Vec<f64> = (0..c * t * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (mu, sd): (f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen_range(0.2..3.0));
        let y: Vec<f64> = (0..c * t * v).map(|_| mu + sd * rng.gen_range(-1.7..1.7)).collect();
        let mut g = Graph::new();
        let xv = FeatureMap::new(g.constant(Tensor::new(&[c, t, v], x)), 0);
        let yv = FeatureMap::new(g.constant(Tensor::new(&[c, t, v], y.clone())), 0);
        let out = adain(&mut g, &topo, xv, yv)?;
        for (a, b) in channel_moments(g.data(out.var), c).iter().zip(channel_moments(&y, c)) {
            worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
        let a = adain(&mut g, &one_part, xv, yv)?;
        let b = bp_adain(&mut g, &one_part, xv, yv)?;
        bitwise &= g.data(a.var) == g.data(b.var);
    }
    outcome(
        worst < 1e-4 && bitwise,
        format!("max moment error {worst:.1e}, one-part bp_adain bitwise equal: {bitwise}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> agn::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = if i % 2 == 0 { 1 } else { rng.gen_range(2..=8) };
        let m1: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m2: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.gen_range(0.01..4.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.gen_range(0.01..4.0)).collect();
        let diag = |v: &[f64]| {
            let mut c = vec![0.0; d * d];
            (0..d).for_each(|k| c[k * d + k] = v[k]);
            c
        };
        let a = GaussianSummary::from_moments(m1.clone(), diag(&v1), 100)?;
        let b = GaussianSummary::from_moments(m2.clone(), diag(&v2), 100)?;
        let want: f64 = (0..d)
            .map(|k| (m1[k] - m2[k]).powi(2) + v1[k] + v2[k] - 2.0 * (v1[k] * v2[k]).sqrt())
            .sum();
        worst = worst.max((fmd(&a, &b)? - want).abs());
    }
    let mut self_worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.gen_range(1..=12);
        let l: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = (0..d).map(|k| l[i * d + k] * l[j * d + k]).sum();
            }
        }
        let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = GaussianSummary::from_moments(m, cov, 100)?;
        self_worst = self_worst.max(fmd(&a, &a)?);
    }
    outcome(
        worst <= 1e-8 && self_worst < 1e-6,
        format!("closed-form max error {worst:.1e}, max fmd(A,A) {self_worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 5 to 8

struct Trained {
    corpus: Corpus,
    mgn: MgnModel,
    initial: f64,
    last: f64,
}

fn train_default(t0: Instant) -> agn::Result<Trained> {
    let corpus = Corpus::synthetic(&SynthConfig::default(), MgnConfig::default().frames)?;
    let mut mgn = MgnModel::new(MgnConfig::default(), 7)?;
    let report = agn::mgn::train_mgn(&mut mgn, &corpus.train, &corpus.test, &TrainConfig::default(), |log, _| {
        eprintln!("  mgn epoch {} monitor {:.4} ({:.0}s)", log.epoch, log.monitor_total, t0.elapsed().as_secs_f64());
        Ok(())
    })?;
    Ok(Trained { corpus, mgn, initial: report.initial_monitor, last: report.final_monitor })
}

fn criterion_5(tr: &Trained) -> agn::Result<Outcome> {
    let err = self_transfer_error(&tr.mgn, &tr.corpus.test)?;
    outcome(
        err < SELF_TRANSFER_THRESHOLD && tr.last < tr.initial / 2.0,
        format!(
            "self-transfer error {err:.4} (threshold {SELF_TRANSFER_THRESHOLD}), monitor {:.4} -> {:.4}",
            tr.initial, tr.last
        ),
    )
}

fn criterion_6(tr: &Trained, recs: &[RecognizerModel]) -> agn::Result<Outcome> {
    let mut rates = Vec::new();
    for (seed, rec) in recs.iter().enumerate() {
        let gen = random_transfers(&tr.mgn, &tr.corpus.test, &tr.corpus.train, 120, 100 + seed as u64)?;
        rates.push(class_preservation(rec, &gen)?);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    outcome(mean >= 0.8, format!("preservation {rates:.3?}, mean {mean:.3}"))
}

fn acceptance_loop() -> LoopConfig {
    LoopConfig { iterations: 3, budget: 12, ..Default::default() }
}

fn criterion_7(tr: &Trained, setup: &RecognizerSetup) -> agn::Result<Outcome> {
    let seeds: Vec<u64> = (0..5).collect();
    let rows = strategy_ablation(
        &tr.mgn,
        &tr.corpus,
        SeedSize::Fraction(0.01),
        &seeds,
        &acceptance_loop(),
        |s| Strategy::Random(1000 + s),
        setup,
    )?;
    let n = rows.len() as f64;
    let umn = rows.iter().map(|r| r.treatment).sum::<f64>() / n;
    let rnd = rows.iter().map(|r| r.control).sum::<f64>() / n;
    let wins = rows.iter().filter(|r| r.treatment > r.control).count();
    let pairs: Vec<String> = rows.iter().map(|r| format!("{:.3}/{:.3}", r.treatment, r.control)).collect();
    outcome(
        umn - rnd >= 0.05 && wins >= 4,
        format!(
            "most_uncertain {umn:.4} vs random {rnd:.4} (gap {:+.1} pts), wins {wins}/5, pairs [{}]",
            100.0 * (umn - rnd),
            pairs.join(" ")
        ),
    )
}

fn criterion_8(tr: &Trained, setup: &RecognizerSetup, baseline: f64) -> agn::Result<Outcome> {
    let sizes = [SeedSize::OneShot, SeedSize::Fraction(0.01), SeedSize::Fraction(0.05), SeedSize::Fraction(0.10)];
    let curve = scaling_curve(&tr.mgn, &tr.corpus, &sizes, &[0, 1, 2], &acceptance_loop(), setup)?;
    let means: Vec<f64> = curve.iter().map(|p| p.mean).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let top = means[3];
    let shown: Vec<String> = curve.iter().map(|p| format!("{} {:.4}", p.size.label(), p.mean)).collect();
    outcome(
        monotone && baseline - top <= 0.05,
        format!("{}; full-data baseline {baseline:.4}", shown.join(", ")),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> agn::Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| agn::Error::io("tempdir", e))?;
    let dir = tmp.path().join("run");
    let config = common::tiny_config(21);
    let first = common::cli_pipeline(&dir, &config);
    std::fs::remove_dir_all(&dir).map_err(|e| agn::Error::io(&dir, e))?;
    let second = common::cli_pipeline(&dir, &config);
    let diff = common::differences(&first, &second);
    outcome(
        diff.is_empty(),
        format!("{} files compared across 9 commands, {} differ {diff:?}", first.len(), diff.len()),
    )
}

// ----------------------------------------------------------------

struct Runner {
    only: Option<BTreeSet<u32>>,
    results: Vec<Result<Outcome, String>>,
}

impl Runner {
    fn wanted(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> agn::Result<Outcome>) {
        if !self.wanted(id) {
            return;
        }
        let start = Instant::now();
        let r = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(o)) => Ok(o),
            Ok(Err(e)) => Err(format!("error: {e}")),
            Err(p) => Err(format!(
                "panic: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let secs = start.elapsed().as_secs_f64();
        match &r {
            Ok(o) => println!("[{}] {id} {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => println!("[FAIL] {id} {name}: {e} ({secs:.1}s)"),
        }
        self.results.push(r);
    }

    fn fail_all(&mut self, ids: &[(u32, &str)], why: &str) {
        for &(id, name) in ids {
            self.run(id, name, || Err(agn::Error::Numeric(why.to_string())));
        }
    }
}

fn main() {
    let only = std::env::var("AGN_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("AGN_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let mut r = Runner { only, results: Vec::new() };
    let t0 = Instant::now();

    r.run(1, "uncertainty metric suite", criterion_1);
    r.run(2, "gradient correctness", criterion_2);
    r.run(3, "adain transfer", criterion_3);
    r.run(4, "fmd oracle equivalence", criterion_4);

    let later = [(5, "end-to-end reconstruction"), (6, "class preservation"), (7, "umn ablation"), (8, "few-shot scaling")];
    if (5..=8).any(|id| r.wanted(id)) {
        let start = Instant::now();
        match train_default(t0) {
            Ok(tr) => {
                println!("  (generator training took {:.0}s)", start.elapsed().as_secs_f64());
                r.run(5, "end-to-end reconstruction", || criterion_5(&tr));
                let setup = RecognizerSetup::default();
                let recs: agn::Result<Vec<RecognizerModel>> = if r.wanted(6) || r.wanted(8) {
                    (0..3).map(|s| setup.fit(&tr.corpus.train, tr.corpus.classes, s)).collect()
                } else {
                    Ok(Vec::new())
                };
                match recs {
                    Ok(recs) => {
                        r.run(6, "class preservation", || criterion_6(&tr, &recs));
                        r.run(7, "umn ablation", || criterion_7(&tr, &setup));
                        r.run(8, "few-shot scaling", || {
                            let accs = recs.iter().map(|m| m.accuracy_on(&tr.corpus.test)).collect::<agn::Result<Vec<f64>>>()?;
                            criterion_8(&tr, &setup, accs.iter().sum::<f64>() / accs.len() as f64)
                        });
                    }
                    Err(e) => r.fail_all(&later[1..], &format!("recognizer training failed: {e}")),
                }
            }
            Err(e) => r.fail_all(&later, &format!("generator training failed: {e}")),
        }
    }

    r.run(9, "reproducibility", criterion_9);

    let total = r.results.len();
    let passed = r.results.iter().filter(|x| matches!(x, Ok(o) if o.pass)).count();
    let broken = r.results.iter().filter(|x| x.is_err()).count();
    println!("acceptance: {passed}/{total} passed in {:.0}s", t0.elapsed().as_secs_f64());
    if broken > 0 || (strict && passed < total) {
        std::process::exit(1);
    }
}
