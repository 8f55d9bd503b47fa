//! Few-shot experiments: selection strategy ablation and accuracy against seed-set size.
//!
//!     cargo run --release --example experiments -- <mgn.ckpt> [seeds]
//!
//! The checkpoint should come from `train_mgn --full` or the `train-mgn` command.

use std::path::Path;

use agn::autograd::load_checkpoint;
use agn::experiment::{full_baseline, scaling_curve, strategy_ablation, Corpus, RecognizerSetup, SeedSize};
use agn::mgn::MgnModel;
use agn::skeleton::SynthConfig;
use agn::umn::{LoopConfig, Strategy};

fn main() -> agn::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("usage: experiments <mgn.ckpt> [seeds]");
    let n_seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seeds"));
    let seeds: Vec<u64> = (0..n_seeds).collect();

    let mgn = MgnModel::from_checkpoint(load_checkpoint(Path::new(&ckpt))?)?;
    let corpus = Corpus::synthetic(&SynthConfig::default(), mgn.config.frames)?;
    let mut setup = RecognizerSetup::default();
    setup.model.frames = mgn.config.frames;
    let config = LoopConfig {
        iterations: 3,
        budget: 12,
        recognizer: setup.model.clone(),
        train: setup.train.clone(),
        ..Default::default()
    };

    println!("strategy ablation, 1% seed set:");
    let rows = strategy_ablation(&mgn, &corpus, SeedSize::Fraction(0.01), &seeds, &config, |s| Strategy::Random(1000 + s), &setup)?;
    for r in &rows {
        println!("  seed {}: most_uncertain {:.4}  random {:.4}", r.seed, r.treatment, r.control);
    }

    println!("accuracy by seed-set size:");
    let sizes = [SeedSize::OneShot, SeedSize::Fraction(0.01), SeedSize::Fraction(0.05), SeedSize::Fraction(0.10)];
    for p in scaling_curve(&mgn, &corpus, &sizes, &seeds, &config, &setup)? {
        println!("  {:<9} {:.4}  {:?}", p.size.label(), p.mean, p.per_seed);
    }
    println!("  full data {:.4}", full_baseline(&corpus, &seeds, &setup)?);
    Ok(())
}
