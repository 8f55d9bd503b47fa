//! Writes the procedural corpus to disk and reads it back through the manifest.
//!
//!     cargo run --release --example synth_corpus -- [out_dir]

use std::collections::BTreeMap;

use agn::skeleton::{synth_corpus, DatasetManifest, Split, SynthConfig};

fn main() -> agn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/synth".into());
    let config = SynthConfig { samples_per_class: 20, ..Default::default() };
    let manifest = synth_corpus(&config, &out)?;
    println!("wrote {} clips to {out}", manifest.entries.len());

    let back = DatasetManifest::read(format!("{out}/manifest.jsonl"))?;
    let mut counts: BTreeMap<(u32, &str), usize> = BTreeMap::new();
    for e in &back.entries {
        let split = if e.split == Split::Test { "test" } else { "train" };
        *counts.entry((e.label, split)).or_default() += 1;
    }
    for ((label, split), n) in counts {
        println!("class {label} {split:>5}: {n}");
    }

    let clips = back.load_all()?;
    let edges = &agn::skeleton::graph::ntu::EDGES;
    for c in clips.iter().step_by(config.samples_per_class).take(4) {
        println!(
            "class {:?} subject {:?}: {:?} frames x joints x xyz, mean bone {:.3}",
            c.label,
            c.subject,
            c.shape(),
            c.mean_bone_length(edges)
        );
    }
    Ok(())
}
