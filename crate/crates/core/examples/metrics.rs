//! Motion distance between clip sets in recognizer feature space, plus a CSV
//! export of the features.
//!
//!     cargo run --release --example metrics -- [out.csv]

use std::path::PathBuf;

use agn::experiment::{motion_distance, Corpus};
use agn::metrics::{export_embeddings, fit_gaussian, fmd, read_embeddings};
use agn::recognizer::{train_recognizer, RecognizerConfig, RecognizerTrainConfig};
use agn::skeleton::{ActionSequence, SynthConfig};

fn jitter(clips: &[ActionSequence], amount: f32) -> agn::Result<Vec<ActionSequence>> {
    clips
        .iter()
        .map(|c| {
            let (t, v, ch) = c.shape();
            let data = c.data().iter().enumerate().map(|(i, x)| x + amount * ((i * 7919 % 13) as f32 / 6.0 - 1.0)).collect();
            Ok(ActionSequence::new(t, v, ch, data)?.with_label(c.label))
        })
        .collect()
}

fn main() -> agn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/embeddings.csv".into()));
    let model = RecognizerConfig { channels: [16, 32, 64], kernel: 5, frames: 32 };
    let corpus = Corpus::synthetic(&SynthConfig { samples_per_class: 30, ..Default::default() }, model.frames)?;
    let rec = train_recognizer(&corpus.train, corpus.classes, &model, &RecognizerTrainConfig { epochs: 6, ..Default::default() })?;

    println!("fmd(train, test)            {:.4}", motion_distance(&rec, &corpus.train, &corpus.test)?);
    for amount in [0.02, 0.1, 0.3] {
        println!("fmd(test, test + noise {amount:.2}) {:.4}", motion_distance(&rec, &corpus.test, &jitter(&corpus.test, amount)?)?);
    }
    let one_class: Vec<_> = corpus.test.iter().filter(|c| c.label == Some(0)).cloned().collect();
    println!("fmd(test, class 0 only)     {:.4}", motion_distance(&rec, &corpus.test, &one_class)?);

    let feats = rec.extract_features(&corpus.test)?;
    let labels: Vec<u32> = corpus.test.iter().map(|c| c.label.unwrap()).collect();
    export_embeddings(&feats, &labels, &out)?;
    let (back, _) = read_embeddings(&out)?;
    let g = fit_gaussian(&back)?;
    println!(
        "exported {} x {} features to {}; fmd(file, memory) = {:.2e}",
        back.len(),
        g.dim(),
        out.display(),
        fmd(&g, &fit_gaussian(&feats)?)?
    );
    Ok(())
}
