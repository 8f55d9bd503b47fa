//! Parses a Kinect `.skeleton` text file into clips, then normalises and resamples them.
//!
//!     cargo run --release --example ntu_loader -- [file.skeleton]
//!
//! Without an argument a two-body file is written from a synthetic clip first.

use std::fmt::Write as _;

use agn::skeleton::{load_ntu_skeleton, normalize, resample_time, synth_samples, NormalizeOptions, SynthConfig};

fn demo_file() -> agn::Result<std::path::PathBuf> {
    let cfg = SynthConfig { classes: 2, samples_per_class: 1, frames: 40, test_fraction: 0.0, ..Default::default() };
    let bodies = synth_samples(&cfg)?;
    let mut s = format!("{}\n", cfg.frames);
    for f in 0..cfg.frames {
        // the second body enters halfway through
        let present: Vec<_> = bodies.iter().enumerate().filter(|(b, _)| *b == 0 || f >= cfg.frames / 2).collect();
        writeln!(s, "{}", present.len()).unwrap();
        for (b, body) in present {
            writeln!(s, "{} 0 1 1 1 1 0 0.01 -0.2 2\n25", 72057594037900000u64 + b as u64).unwrap();
            for j in 0..25 {
                let [x, y, z] = body.sequence.joint(f, j);
                writeln!(s, "{x} {y} {} 256.1 200.3 1000.5 600.2 0.1 0.2 0.3 0.9 2", z + 3.0).unwrap();
            }
        }
    }
    let path = std::env::temp_dir().join("agn_demo.skeleton");
    std::fs::write(&path, s).map_err(|e| agn::Error::io(&path, e))?;
    Ok(path)
}

fn main() -> agn::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => demo_file()?,
    };
    let clips = load_ntu_skeleton(&path)?;
    println!("{}: {} tracked bodies", path.display(), clips.len());
    for (i, c) in clips.iter().enumerate() {
        let n = normalize(c, &NormalizeOptions::ntu())?;
        let r = resample_time(&n, 64)?;
        let spine = r.joint(0, 1);
        println!(
            "body {i}: {:?} raw -> {:?} resampled, root at frame 0 = ({:.2}, {:.2}, {:.2})",
            c.shape(),
            r.shape(),
            spine[0],
            spine[1],
            spine[2]
        );
    }
    Ok(())
}
