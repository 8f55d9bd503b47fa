//! The `agn` command line: argument parsing, config merging, provenance records.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{prepare, Corpus, EvalReport};
use crate::metrics::{accuracy, embeddings_csv, fit_gaussian, fmd};
use crate::mgn::{train_mgn, MgnModel};
use crate::recognizer::{train_recognizer, RecognizerModel};
use crate::skeleton::{save_skl, synth_corpus, ActionSequence, DatasetManifest, ManifestEntry, Split};
use crate::umn::{active_loop, Strategy};

#[derive(Debug, Parser)]
#[command(name = "agn", version, about = "Skeleton action generation with uncertainty-driven selection")]
pub struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; falls back to the config file, then to AGN_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batched inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Where to write the provenance record (default: next to the outputs).
    #[arg(long, global = true)]
    pub run_json: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural corpus: clips plus manifest.jsonl.
    SynthData(SynthArgs),
    /// Train the motion generator on the non-test entries of a manifest.
    TrainMgn(TrainMgnArgs),
    /// Train a recognizer on the non-test entries of a manifest.
    TrainRec(TrainRecArgs),
    /// Class probabilities for every clip of a manifest, as JSON lines.
    Predict(PredictArgs),
    /// Transfer every source clip onto every target clip.
    Generate(GenerateArgs),
    /// Grow a few-shot set with generated clips chosen by uncertainty.
    ActiveLoop(ActiveLoopArgs),
    /// Evaluation reports printed as JSON.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Recognizer features of every clip as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<u32>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub styles: Option<u32>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainMgnArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the epoch log goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainRecArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub rec: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub mgn: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Generate only this many randomly chosen pairs instead of all of them.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ActiveLoopArgs {
    #[arg(long)]
    pub few: PathBuf,
    #[arg(long)]
    pub full: PathBuf,
    #[arg(long)]
    pub mgn_checkpoint: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// most_uncertain, least_uncertain, stratified or random[:SEED].
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Motion distance between real and generated clips in recognizer feature space.
    Fmd {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        rec: PathBuf,
    },
    /// With --rec: that recognizer's top-1 on the generated clips. Without: top-1 on
    /// the real clips of a recognizer trained on the generated ones.
    Acc {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        rec: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub rec: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::TrainMgn(_) => "train-mgn",
            Command::TrainRec(_) => "train-rec",
            Command::Predict(_) => "predict",
            Command::Generate(_) => "generate",
            Command::ActiveLoop(_) => "active-loop",
            Command::Eval(EvalCommand::Fmd { .. }) => "eval fmd",
            Command::Eval(EvalCommand::Acc { .. }) => "eval acc",
            Command::ExportEmbeddings(_) => "export-embeddings",
        }
    }

    /// Directory that receives `run.json` unless overridden.
    fn run_dir(&self) -> PathBuf {
        let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
        match self {
            Command::SynthData(a) => a.out.clone(),
            Command::TrainMgn(a) => parent(&a.out),
            Command::TrainRec(a) => parent(&a.out),
            Command::Predict(a) => a.out.as_deref().map(parent).unwrap_or_default(),
            Command::Generate(a) => a.out.clone(),
            Command::ActiveLoop(a) => a.out.clone(),
            Command::Eval(_) => PathBuf::new(),
            Command::ExportEmbeddings(a) => parent(&a.out),
        }
    }
}

#[derive(Serialize)]
struct Versions {
    agn: &'static str,
    checkpoint_format: u32,
}

#[derive(Serialize)]
struct RunRecord {
    command: &'static str,
    argv: Vec<String>,
    config_hash: Option<String>,
    seed: Option<u64>,
    threads: usize,
    versions: Versions,
    wall_time_s: f64,
    status: &'static str,
    error: Option<String>,
}

/// Effective configuration plus whether any seed source was given.
struct Context {
    config: RunConfig,
    seeded: bool,
    threads: usize,
}

impl Context {
    fn seed(&self) -> Result<u64> {
        if self.seeded {
            Ok(self.config.seed)
        } else {
            Err(Error::Argument("no seed: pass --seed, set AGN_SEED, or give a --config with a seed".into()))
        }
    }
}

fn resolve(cli: &Cli) -> Result<Context> {
    if cli.threads == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let env = match std::env::var("AGN_SEED") {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|e| Error::Argument(format!("AGN_SEED={s:?}: {e}")))?,
        ),
        Err(_) => None,
    };
    let seed = cli.seed.or(file.as_ref().map(|c| c.seed)).or(env);
    let mut config = file.unwrap_or_else(|| RunConfig::with_seed(0));
    if let Some(s) = seed {
        config.set_seed(s);
    }
    Ok(Context { config, seeded: seed.is_some(), threads: cli.threads })
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let start = Instant::now();
    let (ctx, outcome) = match resolve(&cli) {
        Ok(c) => {
            let o = dispatch(&cli.command, &c);
            (Some(c), o)
        }
        Err(e) => (None, Err(e)),
    };
    let record = RunRecord {
        command: cli.command.name(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config_hash: ctx.as_ref().map(|c| c.config.hash()),
        seed: ctx.as_ref().filter(|c| c.seeded).map(|c| c.config.seed),
        threads: cli.threads,
        versions: Versions { agn: env!("CARGO_PKG_VERSION"), checkpoint_format: CHECKPOINT_VERSION },
        wall_time_s: start.elapsed().as_secs_f64(),
        status: if outcome.is_ok() { "ok" } else { "error" },
        error: outcome.as_ref().err().map(ToString::to_string),
    };
    let path = cli.run_json.clone().unwrap_or_else(|| cli.command.run_dir().join("run.json"));
    if let Err(e) = write_json(&path, &record) {
        log::warn!("could not write {}: {e}", path.display());
    }
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_lines<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Applies `f` to every item on up to `threads` scoped workers, keeping order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn load_clips(path: &Path, frames: usize) -> Result<(DatasetManifest, Vec<ActionSequence>)> {
    let m = DatasetManifest::read(path)?;
    if m.entries.is_empty() {
        return Err(Error::Argument(format!("{}: manifest has no entries", path.display())));
    }
    let clips = m
        .load_all()?
        .iter()
        .map(|c| prepare(c, frames))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, clips))
}

fn load_mgn(path: &Path) -> Result<MgnModel> {
    MgnModel::from_checkpoint(load_checkpoint(path)?)
}

fn load_rec(path: &Path) -> Result<RecognizerModel> {
    RecognizerModel::from_checkpoint(load_checkpoint(path)?)
}

fn dispatch(cmd: &Command, ctx: &Context) -> Result<()> {
    match cmd {
        Command::SynthData(a) => synth_data(a, ctx),
        Command::TrainMgn(a) => cmd_train_mgn(a, ctx),
        Command::TrainRec(a) => cmd_train_rec(a, ctx),
        Command::Predict(a) => predict(a, ctx),
        Command::Generate(a) => generate(a, ctx),
        Command::ActiveLoop(a) => cmd_active_loop(a, ctx),
        Command::Eval(e) => eval(e, ctx),
        Command::ExportEmbeddings(a) => export(a, ctx),
    }
}

fn synth_data(a: &SynthArgs, ctx: &Context) -> Result<()> {
    let seed = ctx.seed()?;
    let mut cfg = ctx.config.synth.clone();
    cfg.seed = seed;
    if let Some(v) = a.classes {
        cfg.classes = v;
    }
    if let Some(v) = a.per_class {
        cfg.samples_per_class = v;
    }
    if let Some(v) = a.styles {
        cfg.skeleton_styles = v;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.test_fraction {
        cfg.test_fraction = v;
    }
    let m = synth_corpus(&cfg, &a.out)?;
    log::info!("wrote {} clips to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn split_corpus(path: &Path, frames: usize) -> Result<Corpus> {
    let m = DatasetManifest::read(path)?;
    let c = Corpus::from_manifest(&m, frames)?;
    if c.train.is_empty() {
        return Err(Error::Argument(format!("{}: no training entries", path.display())));
    }
    Ok(c)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_train_mgn(a: &TrainMgnArgs, ctx: &Context) -> Result<()> {
    let seed = ctx.seed()?;
    let mut train = ctx.config.train.clone();
    if let Some(v) = a.epochs {
        train.epochs = v;
    }
    if let Some(v) = a.batch {
        train.batch = v;
    }
    if let Some(v) = a.lr {
        train.lr = v;
    }
    if a.steps_per_epoch.is_some() {
        train.steps_per_epoch = a.steps_per_epoch;
    }
    let cfg = &ctx.config.mgn;
    let corpus = split_corpus(&a.data, cfg.frames)?;
    let distinct = |s: &[ActionSequence]| {
        let mut l: Vec<_> = s.iter().filter_map(|c| c.label).collect();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    let monitor = if distinct(&corpus.test) >= 2 { &corpus.test } else { &corpus.train };
    let mut model = MgnModel::new(cfg.clone(), seed)?;
    let log_path = sibling(&a.out, ".log.jsonl");
    let mut lines = Vec::new();
    let report = train_mgn(&mut model, &corpus.train, monitor, &train, |log, m| {
        lines.push(log.clone());
        write_file(&log_path, &json_lines(&lines)?)?;
        let meta = serde_json::json!({ "train": train, "epoch": log.epoch, "monitor_total": log.monitor_total });
        save_checkpoint(&a.out, &m.to_checkpoint(meta)?)
    })?;
    log::info!("monitor loss {:.4} -> {:.4}", report.initial_monitor, report.final_monitor);
    Ok(())
}

fn cmd_train_rec(a: &TrainRecArgs, ctx: &Context) -> Result<()> {
    let seed = ctx.seed()?;
    let mut setup = ctx.config.recognizer.clone();
    setup.train.seed = seed;
    if let Some(v) = a.epochs {
        setup.train.epochs = v;
    }
    if let Some(v) = a.batch {
        setup.train.batch = v;
    }
    if let Some(v) = a.lr {
        setup.train.lr = v;
    }
    let corpus = split_corpus(&a.data, setup.model.frames)?;
    let model = train_recognizer(&corpus.train, corpus.classes, &setup.model, &setup.train)?;
    let train_acc = model.accuracy_on(&corpus.train)?;
    let test_acc = if corpus.test.is_empty() { None } else { Some(model.accuracy_on(&corpus.test)?) };
    log::info!("recognizer train accuracy {train_acc:.4}, test {test_acc:?}");
    let meta = serde_json::json!({ "train": setup.train, "train_accuracy": train_acc, "test_accuracy": test_acc });
    save_checkpoint(&a.out, &model.to_checkpoint(meta)?)
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    index: usize,
    path: &'a Path,
    label: u32,
    pred: u32,
    probs: &'a [f64],
}

fn predict(a: &PredictArgs, ctx: &Context) -> Result<()> {
    let rec = load_rec(&a.rec)?;
    let (m, clips) = load_clips(&a.data, rec.config.frames)?;
    let rows = par_map(&clips, ctx.threads, |c| Ok(rec.predict_proba(std::slice::from_ref(c))?.rows.remove(0)))?;
    let mut out = Vec::new();
    for (i, (e, p)) in m.entries.iter().zip(&rows).enumerate() {
        let pred = crate::recognizer::PredictionMatrix { rows: vec![p.clone()] }.argmax()[0];
        serde_json::to_writer(&mut out, &PredictionRow { index: i, path: &e.path, label: e.label, pred, probs: p })?;
        out.push(b'\n');
    }
    match &a.out {
        Some(p) => write_file(p, &out),
        None => std::io::stdout().write_all(&out).map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Writes clips under `dir/clips` with a manifest listing them in order.
fn write_clip_set(dir: &Path, names: &[String], clips: &[ActionSequence], split: Split) -> Result<()> {
    let clip_dir = dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for (name, c) in names.iter().zip(clips) {
        let rel = PathBuf::from("clips").join(name);
        save_skl(c, dir.join(&rel))?;
        let label = c.label.ok_or_else(|| Error::Argument(format!("generated clip {name} has no label")))?;
        entries.push(ManifestEntry { path: rel, label, subject: c.subject, split });
    }
    DatasetManifest::new(dir, entries).write(dir.join("manifest.jsonl"))
}

fn generate(a: &GenerateArgs, ctx: &Context) -> Result<()> {
    let mgn = load_mgn(&a.mgn)?;
    let frames = mgn.config.frames;
    let (_, src) = load_clips(&a.src, frames)?;
    let (_, tgt) = load_clips(&a.tgt, frames)?;
    let total = src.len() * tgt.len();
    let pairs: Vec<usize> = match a.pairs {
        None => (0..total).collect(),
        Some(n) => {
            if n > total {
                return Err(Error::Argument(format!("--pairs {n} exceeds the {total} available pairs")));
            }
            let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(ctx.seed()?), total, n).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let clips = par_map(&pairs, ctx.threads, |&p| {
        let (s, t) = (&src[p / tgt.len()], &tgt[p % tgt.len()]);
        Ok(mgn.generate(s, t)?.with_label(s.label).with_subject(t.subject))
    })?;
    let names: Vec<String> = pairs
        .iter()
        .map(|p| format!("g{:05}_{:05}.skl", p / tgt.len(), p % tgt.len()))
        .collect();
    write_clip_set(&a.out, &names, &clips, Split::Train)?;
    log::info!("generated {} clips into {}", clips.len(), a.out.display());
    Ok(())
}

fn cmd_active_loop(a: &ActiveLoopArgs, ctx: &Context) -> Result<()> {
    ctx.seed()?;
    let mgn = load_mgn(&a.mgn_checkpoint)?;
    let mut cfg = ctx.config.loop_config();
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.budget {
        cfg.budget = v;
    }
    if let Some(v) = a.strategy {
        cfg.strategy = v;
    }
    if cfg.recognizer.frames != mgn.config.frames {
        log::warn!("recognizer frames {} follow the generator's {}", cfg.recognizer.frames, mgn.config.frames);
        cfg.recognizer.frames = mgn.config.frames;
    }
    let (_, few) = load_clips(&a.few, mgn.config.frames)?;
    let (_, full) = load_clips(&a.full, mgn.config.frames)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("log.jsonl");
    let mut log_bytes = Vec::new();
    write_file(&log_path, &log_bytes)?;
    let run = active_loop(&mgn, &few, &full, &cfg, |rec| {
        serde_json::to_writer(&mut log_bytes, rec)?;
        log_bytes.push(b'\n');
        write_file(&log_path, &log_bytes)
    });
    let names: Vec<String> = (0..run.state.generated.len()).map(|k| format!("sel_{k:05}.skl")).collect();
    write_clip_set(&a.out, &names, &run.state.generated, Split::Train)?;
    run.into_result().map(|_| ())
}

fn print_report(r: &EvalReport) -> Result<()> {
    let mut bytes = serde_json::to_vec(r)?;
    bytes.push(b'\n');
    std::io::stdout().write_all(&bytes).map_err(|e| Error::io("<stdout>", e))
}

fn labels(clips: &[ActionSequence]) -> Vec<u32> {
    clips.iter().map(|c| c.label.expect("manifest clips carry labels")).collect()
}

fn eval(e: &EvalCommand, ctx: &Context) -> Result<()> {
    match e {
        EvalCommand::Fmd { real, gen, rec } => {
            let rec = load_rec(rec)?;
            let (_, r) = load_clips(real, rec.config.frames)?;
            let (_, g) = load_clips(gen, rec.config.frames)?;
            let fr = par_map(&r, ctx.threads, |c| Ok(rec.extract_features(std::slice::from_ref(c))?.remove(0)))?;
            let fg = par_map(&g, ctx.threads, |c| Ok(rec.extract_features(std::slice::from_ref(c))?.remove(0)))?;
            let d = fmd(&fit_gaussian(&fr)?, &fit_gaussian(&fg)?)?;
            print_report(&EvalReport {
                acc: None,
                fmd: Some(d),
                n_generated: g.len(),
                n_real: r.len(),
                seed: ctx.config.seed,
            })
        }
        EvalCommand::Acc { real, gen, rec: Some(rec) } => {
            let rec = load_rec(rec)?;
            let (_, g) = load_clips(gen, rec.config.frames)?;
            let n_real = match real {
                Some(p) => DatasetManifest::read(p)?.entries.len(),
                None => 0,
            };
            let acc = accuracy(&rec.predict_proba(&g)?, &labels(&g))?;
            print_report(&EvalReport { acc: Some(acc), fmd: None, n_generated: g.len(), n_real, seed: ctx.config.seed })
        }
        EvalCommand::Acc { real, gen, rec: None } => {
            let real = real
                .as_deref()
                .ok_or_else(|| Error::Argument("eval acc needs --real when no --rec is given".into()))?;
            let seed = ctx.seed()?;
            let setup = &ctx.config.recognizer;
            let (_, g) = load_clips(gen, setup.model.frames)?;
            let (m, r) = load_clips(real, setup.model.frames)?;
            let classes = m.class_count() as usize;
            let mut train = setup.train.clone();
            train.seed = seed;
            let model = train_recognizer(&g, classes, &setup.model, &train)?;
            let acc = accuracy(&model.predict_proba(&r)?, &labels(&r))?;
            print_report(&EvalReport { acc: Some(acc), fmd: None, n_generated: g.len(), n_real: r.len(), seed })
        }
    }
}

fn export(a: &ExportArgs, ctx: &Context) -> Result<()> {
    let rec = load_rec(&a.rec)?;
    let (_, clips) = load_clips(&a.data, rec.config.frames)?;
    let feats = par_map(&clips, ctx.threads, |c| Ok(rec.extract_features(std::slice::from_ref(c))?.remove(0)))?;
    write_file(&a.out, embeddings_csv(&feats, &labels(&clips))?.as_bytes())
}
