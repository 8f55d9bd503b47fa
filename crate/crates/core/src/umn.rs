//! Uncertainty scoring of recognizer outputs, sample selection and the
//! generate-score-select loop that grows the few-shot set.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mgn::MgnModel;
use crate::recognizer::{train_recognizer, PredictionMatrix, RecognizerConfig, RecognizerTrainConfig};
use crate::skeleton::ActionSequence;

/// Rows whose variance falls below this are treated as uniform.
pub const UNIFORM_EPS: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;
pub const HISTOGRAM_BINS: usize = 10;

/// One score in `[0, 1]` per prediction row; larger means less certain.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyScores {
    pub values: Vec<f64>,
}

impl UncertaintyScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Counts over `bins` equal-width bins of `[0, 1]`; a score of 1 lands in the last bin.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins];
        for &s in &self.values {
            let b = ((s * bins as f64) as usize).min(bins - 1);
            h[b] += 1;
        }
        h
    }
}

fn row_score(row: &[f64]) -> f64 {
    let l = row.len() as f64;
    let mean = 1.0 / l;
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let var: f64 = row.iter().map(|&y| (y - mean).powi(2)).sum::<f64>() / l;
    if var < UNIFORM_EPS {
        return 1.0;
    }
    let rest = (1.0 - max) / (l - 1.0);
    let var_min = ((max - mean).powi(2) + (l - 1.0) * (rest - mean).powi(2)) / l;
    (1.0 - var_min / var * max).clamp(0.0, 1.0)
}

pub fn uncertainty_score(y: &PredictionMatrix) -> Result<UncertaintyScores> {
    let mut values = Vec::with_capacity(y.len());
    for (k, row) in y.rows.iter().enumerate() {
        ensure!(row.len() >= 2, Argument, "row {k} has {} classes, need at least 2", row.len());
        let sum: f64 = row.iter().sum();
        ensure!(
            row.iter().all(|&v| v.is_finite() && v >= -SIMPLEX_TOL) && (sum - 1.0).abs() <= SIMPLEX_TOL,
            Argument,
            "row {k} is not a probability vector (sum {sum})"
        );
        values.push(row_score(row));
    }
    Ok(UncertaintyScores { values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    #[default]
    MostUncertain,
    LeastUncertain,
    /// Half the budget from each end of the ranking.
    Stratified,
    /// Uniform choice that ignores the scores.
    Random(u64),
}

impl Strategy {
    /// The strategy used at loop iteration `t`; only random selection varies.
    fn at(self, t: usize) -> Self {
        match self {
            Strategy::Random(s) => Strategy::Random(s ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            other => other,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::MostUncertain => f.pad("most_uncertain"),
            Strategy::LeastUncertain => f.pad("least_uncertain"),
            Strategy::Stratified => f.pad("stratified"),
            Strategy::Random(s) => f.pad(&format!("random:{s}")),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most_uncertain" => Ok(Strategy::MostUncertain),
            "least_uncertain" => Ok(Strategy::LeastUncertain),
            "stratified" => Ok(Strategy::Stratified),
            "random" => Ok(Strategy::Random(0)),
            _ => match s.strip_prefix("random:").map(str::parse) {
                Some(Ok(seed)) => Ok(Strategy::Random(seed)),
                _ => Err(Error::Argument(format!(
                    "unknown strategy {s:?} (most_uncertain, least_uncertain, stratified, random[:SEED])"
                ))),
            },
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

fn ranked(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx
}

/// Indices of `budget` samples; ties always resolve towards the lower index.
pub fn select(scores: &UncertaintyScores, budget: usize, strategy: Strategy) -> Result<Vec<usize>> {
    let k = scores.len();
    ensure!(budget <= k, Argument, "budget {budget} exceeds {k} candidates");
    let s = &scores.values;
    Ok(match strategy {
        Strategy::MostUncertain => ranked(s, true).into_iter().take(budget).collect(),
        Strategy::LeastUncertain => ranked(s, false).into_iter().take(budget).collect(),
        Strategy::Stratified => {
            let high = budget - budget / 2;
            let mut out: Vec<usize> = ranked(s, true).into_iter().take(high).collect();
            let low: Vec<usize> = ranked(s, false)
                .into_iter()
                .filter(|i| !out.contains(i))
                .take(budget / 2)
                .collect();
            out.extend(low);
            out
        }
        Strategy::Random(seed) => {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(budget);
            idx
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub iterations: usize,
    pub budget: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Candidates generated per iteration, as a multiple of the budget.
    pub pool_factor: usize,
    pub recognizer: RecognizerConfig,
    pub train: RecognizerTrainConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            budget: 30,
            strategy: Strategy::MostUncertain,
            seed: 7,
            pool_factor: 4,
            recognizer: RecognizerConfig::default(),
            train: RecognizerTrainConfig::default(),
        }
    }
}

/// One line of the loop log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: usize,
    pub selected_indices: Vec<usize>,
    pub score_histogram: Vec<usize>,
    pub recognizer_train_accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LoopState {
    pub t: usize,
    /// Seed clips followed by every selected generated clip.
    pub few: Vec<ActionSequence>,
    pub generated: Vec<ActionSequence>,
    pub logs: Vec<IterationLog>,
}

/// Whatever the loop produced, plus the error that stopped it early, if any.
#[derive(Debug)]
pub struct LoopRun {
    pub state: LoopState,
    pub error: Option<Error>,
}

impl LoopRun {
    pub fn into_result(self) -> Result<LoopState> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.state),
        }
    }
}

fn class_count(few: &[ActionSequence]) -> Result<usize> {
    let mut max = None;
    for (i, s) in few.iter().enumerate() {
        let l = s.label.ok_or_else(|| Error::Argument(format!("seed clip {i} has no label")))?;
        max = max.max(Some(l));
    }
    max.map(|m| m as usize + 1)
        .ok_or_else(|| Error::Argument("the seed set is empty".into()))
}

/// Grows `few` with generated clips chosen by uncertainty.
///
/// `on_iteration` sees each log record as soon as it exists.
pub fn active_loop(
    mgn: &MgnModel,
    few: &[ActionSequence],
    full: &[ActionSequence],
    config: &LoopConfig,
    mut on_iteration: impl FnMut(&IterationLog) -> Result<()>,
) -> LoopRun {
    let mut state = LoopState { t: 0, few: few.to_vec(), generated: Vec::new(), logs: Vec::new() };
    let error = run(mgn, full, config, &mut state, &mut on_iteration).err();
    LoopRun { state, error }
}

fn run(
    mgn: &MgnModel,
    full: &[ActionSequence],
    config: &LoopConfig,
    state: &mut LoopState,
    on_iteration: &mut dyn FnMut(&IterationLog) -> Result<()>,
) -> Result<()> {
    ensure!(config.budget > 0, Argument, "budget must be positive");
    ensure!(config.pool_factor > 0, Argument, "pool_factor must be positive");
    ensure!(!full.is_empty(), Argument, "the target pool is empty");
    let classes = class_count(&state.few)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for t in 1..=config.iterations {
        let remaining = full.len() - state.generated.len();
        if remaining == 0 {
            break;
        }
        let train = RecognizerTrainConfig {
            seed: config.train.seed.wrapping_add(t as u64),
            ..config.train.clone()
        };
        let rec = train_recognizer(&state.few, classes, &config.recognizer, &train)?;
        let train_acc = rec.accuracy_on(&state.few)?;

        let pairs = state.few.len() * full.len();
        let pool = (config.pool_factor * config.budget).min(pairs);
        let mut candidates = Vec::with_capacity(pool);
        for p in index::sample(&mut rng, pairs, pool).into_vec() {
            let src = &state.few[p / full.len()];
            let tgt = &full[p % full.len()];
            candidates.push(mgn.generate(src, tgt)?.with_label(src.label).with_subject(tgt.subject));
        }
        let y = rec.predict_proba(&candidates)?;
        let scores = uncertainty_score(&y)?;
        let take = config.budget.min(pool).min(remaining);
        let chosen = select(&scores, take, config.strategy.at(t))?;
        for &i in &chosen {
            state.few.push(candidates[i].clone());
            state.generated.push(candidates[i].clone());
        }
        let log = IterationLog {
            t,
            selected_indices: chosen,
            score_histogram: scores.histogram(HISTOGRAM_BINS),
            recognizer_train_accuracy: train_acc,
        };
        log::info!(
            "iteration {t}: {} selected, train accuracy {:.3}, {} generated so far",
            log.selected_indices.len(),
            train_acc,
            state.generated.len()
        );
        state.t = t;
        on_iteration(&log)?;
        state.logs.push(log);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgn::MgnConfig;
    use crate::skeleton::{normalize, synth_samples, NormalizeOptions, SynthConfig};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use proptest::strategy::Strategy as _;

    fn scores(rows: Vec<Vec<f64>>) -> Vec<f64> {
        uncertainty_score(&PredictionMatrix { rows }).unwrap().values
    }

    #[test]
    fn worked_cases() {
        let s = scores(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.5, 0.5, 0.0],
            vec![0.25; 4],
        ]);
        assert!(s[0].abs() < 1e-9);
        assert!((s[1] - 0.3).abs() < 1e-9);
        assert!((s[2] - 0.875).abs() < 1e-9);
        assert_eq!(s[3], 1.0);
    }

    #[test]
    fn non_simplex_rows_are_rejected() {
        for row in [vec![0.5, 0.6], vec![1.2, -0.2], vec![1.0], vec![f64::NAN, 1.0]] {
            let r = uncertainty_score(&PredictionMatrix { rows: vec![row] });
            assert!(matches!(r, Err(Error::Argument(_))));
        }
        assert!(uncertainty_score(&PredictionMatrix { rows: vec![vec![0.5 + 5e-7, 0.5]] }).is_ok());
    }

    #[test]
    fn selection_rules() {
        let s = UncertaintyScores { values: vec![0.1, 0.9, 0.5] };
        assert_eq!(select(&s, 1, Strategy::MostUncertain).unwrap(), vec![1]);
        assert_eq!(select(&s, 1, Strategy::LeastUncertain).unwrap(), vec![0]);
        assert_eq!(select(&s, 3, Strategy::MostUncertain).unwrap(), vec![1, 2, 0]);
        assert_eq!(select(&s, 2, Strategy::Stratified).unwrap(), vec![1, 0]);
        assert_eq!(select(&s, 3, Strategy::Stratified).unwrap(), vec![1, 2, 0]);
        assert!(select(&s, 4, Strategy::MostUncertain).is_err());
        let flat = UncertaintyScores { values: vec![0.4; 5] };
        assert_eq!(select(&flat, 2, Strategy::MostUncertain).unwrap(), vec![0, 1]);
        assert_eq!(select(&flat, 2, Strategy::LeastUncertain).unwrap(), vec![0, 1]);
        let r = select(&flat, 3, Strategy::Random(5)).unwrap();
        assert_eq!(r, select(&flat, 3, Strategy::Random(5)).unwrap());
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::MostUncertain, Strategy::LeastUncertain, Strategy::Stratified, Strategy::Random(9)] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Strategy>(&j).unwrap(), s);
        }
        assert_eq!("random".parse::<Strategy>().unwrap(), Strategy::Random(0));
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn histogram_bins() {
        let s = UncertaintyScores { values: vec![0.0, 0.05, 0.1, 0.95, 1.0] };
        let h = s.histogram(10);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[9], 2);
        assert_eq!(h.iter().sum::<usize>(), 5);
    }

    fn simplex_row() -> impl proptest::strategy::Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..=10).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.into_iter().map(|x| (x + 1e-9 / 10.0) / s).collect()
        })
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(row in simplex_row()) {
            let total: f64 = row.iter().sum();
            let row: Vec<f64> = row.iter().map(|x| x / total).collect();
            let s = scores(vec![row])[0];
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn minimum_variance_rows_score_one_minus_max(l in 2usize..10, m in 0.0f64..1.0) {
            let max = 1.0 / l as f64 + m * (1.0 - 1.0 / l as f64);
            prop_assume!(max - 1.0 / l as f64 > 1e-3);
            let mut row = vec![(1.0 - max) / (l - 1) as f64; l];
            row[0] = max;
            let s = scores(vec![row])[0];
            prop_assert!((s - (1.0 - max)).abs() < 1e-9);
        }

        #[test]
        fn permuting_the_rest_keeps_the_score(row in simplex_row(), seed in 0u64..1000) {
            let total: f64 = row.iter().sum();
            let mut row: Vec<f64> = row.iter().map(|x| x / total).collect();
            let a = scores(vec![row.clone()])[0];
            row.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = scores(vec![row])[0];
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn select_returns_distinct_valid_indices(
            v in prop::collection::vec(0.0f64..1.0, 1..30),
            frac in 0.0f64..=1.0,
            which in 0usize..4,
        ) {
            let budget = (v.len() as f64 * frac) as usize;
            let strategy = [Strategy::MostUncertain, Strategy::LeastUncertain, Strategy::Stratified, Strategy::Random(3)][which];
            let s = UncertaintyScores { values: v };
            let out = select(&s, budget, strategy).unwrap();
            prop_assert_eq!(out.len(), budget);
            let mut sorted = out.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), budget);
            prop_assert_eq!(out, select(&s, budget, strategy).unwrap());
        }
    }

    fn clips(classes: u32, per_class: usize, seed: u64) -> Vec<ActionSequence> {
        let cfg = SynthConfig {
            classes,
            samples_per_class: per_class,
            skeleton_styles: 4,
            frames: 16,
            test_fraction: 0.0,
            seed,
        };
        synth_samples(&cfg)
            .unwrap()
            .into_iter()
            .map(|s| normalize(&s.sequence, &NormalizeOptions::ntu()).unwrap())
            .collect()
    }

    fn tiny_loop(iterations: usize, budget: usize) -> LoopConfig {
        LoopConfig {
            iterations,
            budget,
            seed: 3,
            recognizer: RecognizerConfig::tiny(),
            train: RecognizerTrainConfig { epochs: 2, batch: 4, lr: 1e-2, seed: 1 },
            ..Default::default()
        }
    }

    #[test]
    fn loop_grows_the_seed_set_deterministically() {
        let mgn = MgnModel::new(MgnConfig::tiny(), 1).unwrap();
        let few = clips(2, 1, 1);
        let full = clips(2, 3, 2);
        let cfg = tiny_loop(2, 2);
        let mut seen = Vec::new();
        let run = active_loop(&mgn, &few, &full, &cfg, |l| {
            seen.push(l.t);
            Ok(())
        });
        let a = run.into_result().unwrap();
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(a.few.len(), 2 + 4);
        assert_eq!(a.generated.len(), 4);
        for log in &a.logs {
            assert_eq!(log.score_histogram.iter().sum::<usize>(), 8);
            assert_eq!(log.selected_indices.len(), 2);
        }
        assert!(a.generated.iter().all(|g| g.label.is_some()));
        let b = active_loop(&mgn, &few, &full, &cfg, |_| Ok(())).into_result().unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.generated, b.generated);
    }

    #[test]
    fn single_pass_and_stop_rule() {
        let mgn = MgnModel::new(MgnConfig::tiny(), 1).unwrap();
        let few = clips(2, 1, 1);
        let full = clips(2, 2, 2);
        let s = active_loop(&mgn, &few, &full, &tiny_loop(1, 4), |_| Ok(())).into_result().unwrap();
        assert_eq!(s.generated.len(), 4);
        let s = active_loop(&mgn, &few, &full, &tiny_loop(5, 3), |_| Ok(())).into_result().unwrap();
        assert_eq!(s.generated.len(), 4);
        assert_eq!(s.logs.len(), 2);
    }

    #[test]
    fn failure_keeps_partial_results() {
        let mgn = MgnModel::new(MgnConfig::tiny(), 1).unwrap();
        let few = clips(2, 1, 1);
        let full = clips(2, 2, 2);
        let mut n = 0;
        let run = active_loop(&mgn, &few, &full, &tiny_loop(3, 1), |_| {
            n += 1;
            if n == 2 {
                Err(Error::Argument("stop".into()))
            } else {
                Ok(())
            }
        });
        assert!(run.error.is_some());
        assert_eq!(run.state.logs.len(), 1);
        let missing = vec![few[1].clone()];
        let run = active_loop(&mgn, &missing, &full, &tiny_loop(1, 1), |_| Ok(()));
        assert!(matches!(run.error, Some(Error::Argument(_))));
        assert!(run.state.logs.is_empty());
    }
}
