//! Transfers one clip's motion onto another subject's skeleton.
//!
//!     cargo run --release --example style_transfer -- [mgn.ckpt] [out_dir]
//!
//! Without a checkpoint a reduced generator is trained for a few epochs first.

use std::path::PathBuf;

use agn::autograd::load_checkpoint;
use agn::experiment::Corpus;
use agn::mgn::{train_mgn, MgnConfig, MgnModel, TrainConfig};
use agn::skeleton::graph::ntu::EDGES;
use agn::skeleton::{save_skl, ActionSequence, SynthConfig};

/// Per-bone lengths averaged over frames.
fn bones(c: &ActionSequence) -> Vec<f64> {
    EDGES
        .iter()
        .map(|&(a, b)| {
            (0..c.frames())
                .map(|t| {
                    let (p, q) = (c.joint(t, a), c.joint(t, b));
                    (0..3).map(|k| ((p[k] - q[k]) as f64).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / c.frames() as f64
        })
        .collect()
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn main() -> agn::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|a| a != "-");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/transfer".into()));

    let mgn = match ckpt {
        Some(p) => MgnModel::from_checkpoint(load_checkpoint(PathBuf::from(p).as_path())?)?,
        None => {
            let cfg = MgnConfig { channels: [16, 32, 64], kernel: 5, frames: 32, attn_dim: 16 };
            let corpus = Corpus::synthetic(&SynthConfig { samples_per_class: 16, ..Default::default() }, cfg.frames)?;
            let mut m = MgnModel::new(cfg, 3)?;
            train_mgn(&mut m, &corpus.train, &corpus.test, &TrainConfig { epochs: 4, ..Default::default() }, |l, _| {
                println!("warm-up epoch {} monitor {:.4}", l.epoch, l.monitor_total);
                Ok(())
            })?;
            m
        }
    };
    let frames = mgn.config.frames;
    let corpus = Corpus::synthetic(&SynthConfig { samples_per_class: 10, seed: 99, ..Default::default() }, frames)?;

    // one source per class, all onto the first clip of another subject
    let target = corpus.test.iter().find(|c| c.subject != corpus.test[0].subject).unwrap_or(&corpus.test[0]);
    std::fs::create_dir_all(&out).map_err(|e| agn::Error::io(&out, e))?;
    save_skl(target, out.join("target.skl"))?;
    let tb = bones(target);
    println!("target subject {:?}; bone-length gap of the output to the source and to the target:", target.subject);
    for class in 0..corpus.classes as u32 {
        let src = corpus.test.iter().find(|c| c.label == Some(class)).expect("class present");
        let y = mgn.generate(src, target)?.with_label(src.label).with_subject(target.subject);
        save_skl(src, out.join(format!("source_{class}.skl")))?;
        save_skl(&y, out.join(format!("transfer_{class}.skl")))?;
        let yb = bones(&y);
        println!(
            "class {class} (subject {:?}): to source {:.4}, to target {:.4}",
            src.subject,
            gap(&yb, &bones(src)),
            gap(&yb, &tb)
        );
    }
    println!("clips written to {}", out.display());
    Ok(())
}
