//! Scores prediction rows by how spread out they are and picks samples with
//! each selection strategy.
//!
//!     cargo run --release --example uncertainty

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agn::recognizer::PredictionMatrix;
use agn::umn::{select, uncertainty_score, Strategy, HISTOGRAM_BINS};

fn main() -> agn::Result<()> {
    let worked = PredictionMatrix {
        rows: vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.5, 0.5, 0.0],
            vec![0.25; 4],
        ],
    };
    for (row, s) in worked.rows.iter().zip(uncertainty_score(&worked)?.values) {
        println!("{row:?} -> {s:.4}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = (0..40)
        .map(|_| {
            let sharp = rng.gen_range(0.5..8.0);
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0f64..1.0).powf(sharp)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let scores = uncertainty_score(&PredictionMatrix { rows })?;
    println!("\nhistogram of 40 random rows: {:?}", scores.histogram(HISTOGRAM_BINS));
    for strategy in [Strategy::MostUncertain, Strategy::LeastUncertain, Strategy::Stratified, Strategy::Random(1)] {
        let picked = select(&scores, 5, strategy)?;
        let vals: Vec<String> = picked.iter().map(|&i| format!("{:.2}", scores.values[i])).collect();
        println!("{strategy:<15} {picked:?} scores [{}]", vals.join(", "));
    }
    Ok(())
}
