//! Trains the motion generator on a small synthetic corpus and saves a checkpoint.
//!
//!     cargo run --release --example train_mgn -- [epochs] [out.ckpt] [--full]
//!
//! `--full` uses the default architecture and the 600-clip corpus (minutes per epoch);
//! otherwise a reduced model runs at 32 frames.

use std::path::PathBuf;

use agn::autograd::save_checkpoint;
use agn::experiment::{self_transfer_error, Corpus};
use agn::mgn::{train_mgn, MgnConfig, MgnModel, TrainConfig};
use agn::skeleton::SynthConfig;

fn main() -> agn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let pos: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let epochs = pos.first().map_or(6, |s| s.parse().expect("epochs"));
    let out = PathBuf::from(pos.get(1).map_or("target/mgn.ckpt", |s| s.as_str()));

    let (model_cfg, synth) = if full {
        (MgnConfig::default(), SynthConfig::default())
    } else {
        (
            MgnConfig { channels: [16, 32, 64], kernel: 5, frames: 32, attn_dim: 16 },
            SynthConfig { samples_per_class: 24, ..Default::default() },
        )
    };
    let corpus = Corpus::synthetic(&synth, model_cfg.frames)?;
    println!("{} training clips, {} held out", corpus.train.len(), corpus.test.len());

    let mut model = MgnModel::new(model_cfg, 7)?;
    let cfg = TrainConfig { epochs, ..Default::default() };
    let report = train_mgn(&mut model, &corpus.train, &corpus.test, &cfg, |log, m| {
        let p = &log.monitor;
        println!(
            "epoch {:>2}  monitor {:.4}  (rec {:.4} cyc {:.4} trip {:.4})",
            log.epoch, log.monitor_total, p.rec, p.cyc, p.trip
        );
        save_checkpoint(&out, &m.to_checkpoint(serde_json::json!({ "epoch": log.epoch }))?)
    })?;
    println!(
        "monitor {:.4} -> {:.4}; held-out self-transfer error {:.4}; saved {}",
        report.initial_monitor,
        report.final_monitor,
        self_transfer_error(&model, &corpus.test)?,
        out.display()
    );
    Ok(())
}
