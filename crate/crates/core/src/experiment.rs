//! Data preparation and the evaluation experiments built on the generator,
//! the recognizer and the active loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::metrics::{accuracy, fit_gaussian, fmd};
use crate::mgn::MgnModel;
use crate::recognizer::{train_recognizer, RecognizerConfig, RecognizerModel, RecognizerTrainConfig};
use crate::skeleton::{normalize, resample_time, ActionSequence, DatasetManifest, NormalizeOptions, Split};
use crate::skeleton::{synth_samples, SynthConfig};
use crate::umn::{active_loop, LoopConfig, LoopState, Strategy};

/// Root-centred, unit-bone clip resampled to `frames`.
pub fn prepare(seq: &ActionSequence, frames: usize) -> Result<ActionSequence> {
    resample_time(&normalize(seq, &NormalizeOptions::ntu())?, frames)
}

/// Prepared train and test clips sharing one label space.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<ActionSequence>,
    pub test: Vec<ActionSequence>,
    pub classes: usize,
}

impl Corpus {
    pub fn synthetic(config: &SynthConfig, frames: usize) -> Result<Self> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in synth_samples(config)? {
            let clip = prepare(&s.sequence, frames)?;
            if s.split == Split::Test {
                test.push(clip);
            } else {
                train.push(clip);
            }
        }
        Ok(Self { train, test, classes: config.classes as usize })
    }

    /// Entries tagged `test` form the test side; all others are training clips.
    pub fn from_manifest(manifest: &DatasetManifest, frames: usize) -> Result<Self> {
        let clips = manifest.load_all()?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (e, c) in manifest.entries.iter().zip(&clips) {
            let clip = prepare(c, frames)?;
            if e.split == Split::Test {
                test.push(clip);
            } else {
                train.push(clip);
            }
        }
        Ok(Self { train, test, classes: manifest.class_count() as usize })
    }
}

/// How many clips per class the few-shot seed keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSize {
    OneShot,
    Fraction(f64),
}

impl SeedSize {
    pub fn per_class(self, available: usize) -> usize {
        match self {
            SeedSize::OneShot => 1,
            SeedSize::Fraction(f) => ((available as f64 * f).round() as usize).clamp(1, available),
        }
    }

    pub fn label(self) -> String {
        match self {
            SeedSize::OneShot => "one-shot".into(),
            SeedSize::Fraction(f) => format!("{}%", f * 100.0),
        }
    }
}

fn by_class(clips: &[ActionSequence]) -> Result<BTreeMap<u32, Vec<usize>>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        let l = c.label.ok_or_else(|| Error::Argument(format!("clip {i} has no label")))?;
        m.entry(l).or_default().push(i);
    }
    Ok(m)
}

/// A per-class random subset of `clips`, in class order.
pub fn few_shot(clips: &[ActionSequence], size: SeedSize, seed: u64) -> Result<Vec<ActionSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut idx) in by_class(clips)? {
        idx.shuffle(&mut rng);
        let k = size.per_class(idx.len());
        out.extend(idx[..k].iter().map(|&i| clips[i].clone()));
    }
    Ok(out)
}

/// Mean joint position error of generating each clip from itself.
pub fn self_transfer_error(mgn: &MgnModel, clips: &[ActionSequence]) -> Result<f64> {
    ensure!(!clips.is_empty(), Argument, "no clips to reconstruct");
    let mut total = 0.0;
    for c in clips {
        let out = mgn.generate(c, c)?;
        let (t, v, _) = c.shape();
        let mut err = 0.0;
        for f in 0..t {
            for j in 0..v {
                let (a, b) = (c.joint(f, j), out.joint(f, j));
                err += (0..3).map(|k| ((a[k] - b[k]) as f64).powi(2)).sum::<f64>().sqrt();
            }
        }
        total += err / (t * v) as f64;
    }
    Ok(total / clips.len() as f64)
}

/// `n` transfers from random sources onto random targets, labelled with the source class.
pub fn random_transfers(
    mgn: &MgnModel,
    sources: &[ActionSequence],
    targets: &[ActionSequence],
    n: usize,
    seed: u64,
) -> Result<Vec<ActionSequence>> {
    ensure!(!sources.is_empty() && !targets.is_empty(), Argument, "empty source or target set");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = &sources[rng.gen_range(0..sources.len())];
            let t = &targets[rng.gen_range(0..targets.len())];
            Ok(mgn.generate(s, t)?.with_label(s.label).with_subject(t.subject))
        })
        .collect()
}

/// Fraction of generated clips the recognizer assigns to their source class.
pub fn class_preservation(rec: &RecognizerModel, generated: &[ActionSequence]) -> Result<f64> {
    rec.accuracy_on(generated)
}

/// Distance between recognizer feature distributions of two clip sets.
pub fn motion_distance(rec: &RecognizerModel, real: &[ActionSequence], generated: &[ActionSequence]) -> Result<f64> {
    let a = fit_gaussian(&rec.extract_features(real)?)?;
    let b = fit_gaussian(&rec.extract_features(generated)?)?;
    fmd(&a, &b)
}

/// One evaluation cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: Option<f64>,
    pub fmd: Option<f64>,
    pub n_generated: usize,
    pub n_real: usize,
    pub seed: u64,
}

/// Recognizer settings shared by every fit inside an experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerSetup {
    pub model: RecognizerConfig,
    pub train: RecognizerTrainConfig,
}

impl RecognizerSetup {
    pub fn fit(&self, data: &[ActionSequence], classes: usize, seed: u64) -> Result<RecognizerModel> {
        let train = RecognizerTrainConfig { seed, ..self.train.clone() };
        train_recognizer(data, classes, &self.model, &train)
    }
}

/// Trains on `seed_set ∪ generated`, scores top-1 on `test`, and measures the
/// distance between `feature_rec` features of `test` and of `generated`.
pub fn eval_protocol(
    generated: &[ActionSequence],
    seed_set: &[ActionSequence],
    test: &[ActionSequence],
    feature_rec: &RecognizerModel,
    setup: &RecognizerSetup,
    seed: u64,
) -> Result<EvalReport> {
    ensure!(!test.is_empty(), Argument, "empty real test set");
    let mut data = seed_set.to_vec();
    data.extend_from_slice(generated);
    let rec = setup.fit(&data, feature_rec.classes, seed)?;
    let labels: Vec<u32> = test
        .iter()
        .map(|c| c.label.ok_or_else(|| Error::Argument("unlabelled test clip".into())))
        .collect::<Result<_>>()?;
    let acc = accuracy(&rec.predict_proba(test)?, &labels)?;
    let fmd = if generated.len() >= 2 {
        Some(motion_distance(feature_rec, test, generated)?)
    } else {
        None
    };
    Ok(EvalReport { acc: Some(acc), fmd, n_generated: generated.len(), n_real: test.len(), seed })
}

/// Accuracy on `test` of a recognizer trained after growing `seed_set` with the active loop.
pub fn loop_accuracy(
    mgn: &MgnModel,
    seed_set: &[ActionSequence],
    pool: &[ActionSequence],
    test: &[ActionSequence],
    classes: usize,
    config: &LoopConfig,
    setup: &RecognizerSetup,
) -> Result<(f64, LoopState)> {
    let state = active_loop(mgn, seed_set, pool, config, |_| Ok(())).into_result()?;
    let rec = setup.fit(&state.few, classes, config.seed)?;
    Ok((rec.accuracy_on(test)?, state))
}

/// Paired accuracies of two selection strategies, one pair per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub treatment: f64,
    pub control: f64,
}

/// Runs the loop twice per seed on the same few-shot set, once with
/// `config.strategy` and once with `control(seed)`.
pub fn strategy_ablation(
    mgn: &MgnModel,
    corpus: &Corpus,
    size: SeedSize,
    seeds: &[u64],
    config: &LoopConfig,
    control: impl Fn(u64) -> Strategy,
    setup: &RecognizerSetup,
) -> Result<Vec<AblationRow>> {
    seeds
        .iter()
        .map(|&seed| {
            let few = few_shot(&corpus.train, size, seed)?;
            let run = |strategy: Strategy| {
                let cfg = LoopConfig { strategy, seed, ..config.clone() };
                loop_accuracy(mgn, &few, &corpus.train, &corpus.test, corpus.classes, &cfg, setup).map(|r| r.0)
            };
            let treatment = run(config.strategy)?;
            let other = control(seed);
            let control = run(other)?;
            log::info!("seed {seed}: {} {treatment:.4} vs {other} {control:.4}", config.strategy);
            Ok(AblationRow { seed, treatment, control })
        })
        .collect()
}

/// Mean accuracy for one seed-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: SeedSize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

/// Accuracy of the loop-grown recognizer for each seed-set size.
pub fn scaling_curve(
    mgn: &MgnModel,
    corpus: &Corpus,
    sizes: &[SeedSize],
    seeds: &[u64],
    config: &LoopConfig,
    setup: &RecognizerSetup,
) -> Result<Vec<ScalingPoint>> {
    sizes
        .iter()
        .map(|&size| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let few = few_shot(&corpus.train, size, seed)?;
                    let cfg = LoopConfig { seed, ..config.clone() };
                    let (acc, _) = loop_accuracy(mgn, &few, &corpus.train, &corpus.test, corpus.classes, &cfg, setup)?;
                    log::info!("{} seed {seed}: {acc:.4}", size.label());
                    Ok(acc)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
            Ok(ScalingPoint { size, per_seed, mean })
        })
        .collect()
}

/// Accuracy of a recognizer trained on all of `corpus.train`, averaged over seeds.
pub fn full_baseline(corpus: &Corpus, seeds: &[u64], setup: &RecognizerSetup) -> Result<f64> {
    ensure!(!seeds.is_empty(), Argument, "no seeds");
    let mut total = 0.0;
    for &seed in seeds {
        total += setup.fit(&corpus.train, corpus.classes, seed)?.accuracy_on(&corpus.test)?;
    }
    Ok(total / seeds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Corpus {
        let cfg = SynthConfig {
            classes: 3,
            samples_per_class: 10,
            skeleton_styles: 3,
            frames: 16,
            test_fraction: 0.3,
            seed: 4,
        };
        Corpus::synthetic(&cfg, 16).unwrap()
    }

    #[test]
    fn corpus_split_and_preparation() {
        let c = tiny_corpus();
        assert_eq!((c.train.len(), c.test.len(), c.classes), (21, 9, 3));
        for s in c.train.iter().chain(&c.test) {
            assert_eq!(s.frames(), 16);
            assert!((s.mean_bone_length(&crate::skeleton::graph::ntu::EDGES) - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn few_shot_sizes() {
        let c = tiny_corpus();
        let one = few_shot(&c.train, SeedSize::OneShot, 1).unwrap();
        assert_eq!(one.len(), 3);
        assert_eq!(one.iter().map(|s| s.label.unwrap()).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(few_shot(&c.train, SeedSize::Fraction(0.3), 1).unwrap().len(), 6);
        assert_eq!(few_shot(&c.train, SeedSize::Fraction(0.01), 1).unwrap().len(), 3);
        assert_eq!(few_shot(&c.train, SeedSize::Fraction(1.0), 1).unwrap().len(), 21);
        assert_eq!(
            few_shot(&c.train, SeedSize::OneShot, 9).unwrap(),
            few_shot(&c.train, SeedSize::OneShot, 9).unwrap()
        );
    }

    #[test]
    fn identical_sets_have_near_zero_distance() {
        let c = tiny_corpus();
        let rec = RecognizerModel::new(RecognizerConfig::tiny(), 3, 2).unwrap();
        let d = motion_distance(&rec, &c.train, &c.train).unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
