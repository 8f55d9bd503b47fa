//! Trains the action recognizer, reports top-1 accuracy and a confusion matrix,
//! and round-trips the model through a checkpoint.
//!
//!     cargo run --release --example recognizer -- [epochs]

use agn::autograd::{decode_checkpoint, encode_checkpoint};
use agn::experiment::Corpus;
use agn::recognizer::{train_recognizer, RecognizerConfig, RecognizerModel, RecognizerTrainConfig};
use agn::skeleton::SynthConfig;

fn main() -> agn::Result<()> {
    let epochs = std::env::args().nth(1).map_or(8, |s| s.parse().expect("epochs"));
    let model = RecognizerConfig { channels: [16, 32, 64], kernel: 5, frames: 32 };
    let corpus = Corpus::synthetic(&SynthConfig { samples_per_class: 30, ..Default::default() }, model.frames)?;
    let rec = train_recognizer(&corpus.train, corpus.classes, &model, &RecognizerTrainConfig { epochs, ..Default::default() })?;

    let probs = rec.predict_proba(&corpus.test)?;
    let mut confusion = vec![vec![0usize; corpus.classes]; corpus.classes];
    for (c, p) in corpus.test.iter().zip(probs.argmax()) {
        confusion[c.label.unwrap() as usize][p as usize] += 1;
    }
    println!("train {:.3}  test {:.3}", rec.accuracy_on(&corpus.train)?, rec.accuracy_on(&corpus.test)?);
    println!("confusion (rows = true class):");
    for row in &confusion {
        println!("  {row:?}");
    }

    let bytes = encode_checkpoint(&rec.to_checkpoint(serde_json::Value::Null)?)?;
    let back = RecognizerModel::from_checkpoint(decode_checkpoint(&bytes)?)?;
    println!(
        "checkpoint {} bytes, reloaded predictions identical: {}",
        bytes.len(),
        back.predict_proba(&corpus.test)? == probs
    );
    println!("feature width {}", rec.extract_features(&corpus.test[..1])?[0].len());
    Ok(())
}
