//! Grows a one-shot training set with generated clips chosen by uncertainty and
//! compares the recognizer before and after.
//!
//!     cargo run --release --example active_loop -- [mgn.ckpt] [strategy]
//!
//! Without a checkpoint a reduced generator is trained for a few epochs first.

use std::path::Path;

use agn::autograd::load_checkpoint;
use agn::experiment::{few_shot, Corpus, RecognizerSetup, SeedSize};
use agn::mgn::{train_mgn, MgnConfig, MgnModel, TrainConfig};
use agn::recognizer::{RecognizerConfig, RecognizerTrainConfig};
use agn::skeleton::SynthConfig;
use agn::umn::{active_loop, LoopConfig, Strategy};

fn main() -> agn::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|a| a != "-");
    let strategy: Strategy = args.next().map_or(Ok(Strategy::MostUncertain), |s| s.parse())?;

    let synth = SynthConfig { samples_per_class: 30, ..Default::default() };
    let mgn = match ckpt {
        Some(p) => MgnModel::from_checkpoint(load_checkpoint(Path::new(&p))?)?,
        None => {
            let cfg = MgnConfig { channels: [16, 32, 64], kernel: 5, frames: 32, attn_dim: 16 };
            let corpus = Corpus::synthetic(&synth, cfg.frames)?;
            let mut m = MgnModel::new(cfg, 3)?;
            train_mgn(&mut m, &corpus.train, &corpus.test, &TrainConfig { epochs: 5, ..Default::default() }, |l, _| {
                println!("warm-up epoch {} monitor {:.4}", l.epoch, l.monitor_total);
                Ok(())
            })?;
            m
        }
    };
    let frames = mgn.config.frames;
    let corpus = Corpus::synthetic(&synth, frames)?;
    let few = few_shot(&corpus.train, SeedSize::OneShot, 0)?;

    let setup = RecognizerSetup {
        model: RecognizerConfig { channels: [16, 32, 64], kernel: 5, frames },
        train: RecognizerTrainConfig { epochs: 15, ..Default::default() },
    };
    let before = setup.fit(&few, corpus.classes, 1)?.accuracy_on(&corpus.test)?;

    let config = LoopConfig {
        iterations: 3,
        budget: 12,
        strategy,
        recognizer: setup.model.clone(),
        train: setup.train.clone(),
        ..Default::default()
    };
    let run = active_loop(&mgn, &few, &corpus.train, &config, |log| {
        println!(
            "iteration {}: recognizer train acc {:.2}, scores {:?}, picked {} clips",
            log.t,
            log.recognizer_train_accuracy,
            log.score_histogram,
            log.selected_indices.len()
        );
        Ok(())
    });
    let state = run.into_result()?;
    let after = setup.fit(&state.few, corpus.classes, 1)?.accuracy_on(&corpus.test)?;
    println!(
        "{strategy}: {} seed clips -> {} after {} iterations; test accuracy {before:.3} -> {after:.3}",
        few.len(),
        state.few.len(),
        state.t
    );
    Ok(())
}
