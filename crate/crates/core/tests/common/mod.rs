#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agn::config::RunConfig;
use agn::mgn::MgnConfig;
use agn::recognizer::RecognizerConfig;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_agn"))
}

pub fn agn(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env_remove("AGN_SEED")
        .output()
        .expect("spawn agn")
}

/// A config small enough that the whole pipeline runs in seconds.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::with_seed(seed);
    c.mgn = MgnConfig::tiny();
    c.train.epochs = 2;
    c.train.batch = 4;
    c.recognizer.model = RecognizerConfig::tiny();
    c.recognizer.train.epochs = 3;
    c.active.iterations = 2;
    c.active.budget = 3;
    c.set_seed(seed);
    c
}

fn ok(out: Output, what: &str) -> Output {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs every subcommand once inside `dir`, saving standard output of the
/// reporting commands as files. Returns every produced file except `run.json`.
pub fn cli_pipeline(dir: &Path, config: &RunConfig) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config).unwrap()).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "config.json"];
        full.extend_from_slice(args);
        ok(agn(&full, dir), args[0])
    };
    run(&["synth-data", "--classes", "3", "--per-class", "6", "--styles", "3", "--frames", "20", "--test-fraction", "0.34", "--out", "data"]);
    run(&["train-mgn", "--data", "data/manifest.jsonl", "--out", "mgn.ckpt", "--steps-per-epoch", "2"]);
    run(&["train-rec", "--data", "data/manifest.jsonl", "--out", "rec.ckpt"]);
    run(&["predict", "--rec", "rec.ckpt", "--data", "data/manifest.jsonl", "--out", "pred.jsonl"]);
    run(&["generate", "--mgn", "mgn.ckpt", "--src", "data/manifest.jsonl", "--tgt", "data/manifest.jsonl", "--pairs", "5", "--out", "gen"]);
    run(&["active-loop", "--few", "data/manifest.jsonl", "--full", "data/manifest.jsonl", "--mgn-checkpoint", "mgn.ckpt", "--out", "loop"]);
    let fmd = run(&["eval", "fmd", "--real", "data/manifest.jsonl", "--gen", "gen/manifest.jsonl", "--rec", "rec.ckpt"]);
    fs::write(dir.join("fmd.json"), fmd.stdout).unwrap();
    let acc = run(&["eval", "acc", "--gen", "gen/manifest.jsonl", "--rec", "rec.ckpt"]);
    fs::write(dir.join("acc.json"), acc.stdout).unwrap();
    run(&["export-embeddings", "--rec", "rec.ckpt", "--data", "data/manifest.jsonl", "--out", "emb.csv"]);
    snapshot(dir)
}

pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Names of files that differ between two snapshots, or exist in only one.
pub fn differences(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Vec<PathBuf> {
    let mut keys: Vec<&PathBuf> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
