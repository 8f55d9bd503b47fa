//! Run configuration file: one JSON object, unknown keys rejected, seed required.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::RecognizerSetup;
use crate::mgn::{MgnConfig, TrainConfig};
use crate::skeleton::SynthConfig;
use crate::umn::{LoopConfig, Strategy};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Active loop knobs other than the recognizer, which lives under `recognizer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub iterations: usize,
    pub budget: usize,
    pub strategy: Strategy,
    pub pool_factor: usize,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        let l = LoopConfig::default();
        Self {
            iterations: l.iterations,
            budget: l.budget,
            strategy: l.strategy,
            pool_factor: l.pool_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub mgn: MgnConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub recognizer: RecognizerSetup,
    #[serde(default)]
    pub active: ActiveConfig,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            mgn: MgnConfig::default(),
            train: TrainConfig::default(),
            recognizer: RecognizerSetup::default(),
            active: ActiveConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the run seed into every section that carries its own.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self.recognizer.train.seed = seed;
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            iterations: self.active.iterations,
            budget: self.active.budget,
            strategy: self.active.strategy,
            seed: self.seed,
            pool_factor: self.active.pool_factor,
            recognizer: self.recognizer.model.clone(),
            train: self.recognizer.train.clone(),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required_and_unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("{}"), Err(Error::Config(_))));
        assert!(RunConfig::parse(r#"{"seed": 3, "extra": 1}"#).is_err());
        assert!(RunConfig::parse(r#"{"seed": 3, "train": {"epochs": 2, "typo": 1}}"#).is_err());
        let c = RunConfig::parse(r#"{"seed": 3, "train": {"epochs": 2}, "active": {"strategy": "stratified"}}"#).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch, TrainConfig::default().batch);
        assert_eq!(c.active.strategy, Strategy::Stratified);
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = RunConfig::with_seed(5);
        c.set_seed(9);
        assert_eq!((c.train.seed, c.synth.seed, c.recognizer.train.seed), (9, 9, 9));
        let back = RunConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::with_seed(1).hash(), RunConfig::with_seed(2).hash());
        assert_eq!(c.hash().len(), 64);
    }
}
