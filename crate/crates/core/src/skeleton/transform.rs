use crate::error::{ensure, Error, Result};

use super::sequence::{ActionSequence, MIN_FRAMES};

/// Options for [`normalize`].
#[derive(Clone, Debug)]
pub struct NormalizeOptions<'a> {
    pub root: usize,
    pub edges: &'a [(usize, usize)],
}

impl NormalizeOptions<'static> {
    /// Spine-mid root and the 24 bones of the 25-joint layout.
    pub fn ntu() -> Self {
        Self {
            root: super::graph::ntu::ROOT,
            edges: &super::graph::ntu::EDGES,
        }
    }
}

/// Translates the root joint of frame 0 to the origin and rescales so the
/// mean bone length over the clip is 1. The same transform applies to all frames.
pub fn normalize(seq: &ActionSequence, opts: &NormalizeOptions<'_>) -> Result<ActionSequence> {
    ensure!(
        opts.root < seq.joints(),
        Argument,
        "root joint {} out of range for {} joints",
        opts.root,
        seq.joints()
    );
    let bone = seq.mean_bone_length(opts.edges);
    if bone.is_nan() || bone <= 1e-9 || !bone.is_finite() {
        return Err(Error::Degenerate(format!(
            "mean bone length {bone:e}; joints are coincident"
        )));
    }
    let origin: Vec<f64> = (0..seq.channels())
        .map(|c| seq.get(0, opts.root, c) as f64)
        .collect();
    Ok(seq.map_affine(&origin, 1.0 / bone))
}

/// Uniform scale that [`normalize`] would apply; lets generated clips be mapped
/// back to a reference skeleton's size.
pub fn bone_scale(seq: &ActionSequence, edges: &[(usize, usize)]) -> f64 {
    seq.mean_bone_length(edges)
}

/// Linear interpolation along frames to exactly `target` frames; endpoints preserved.
pub fn resample_time(seq: &ActionSequence, target: usize) -> Result<ActionSequence> {
    ensure!(
        target >= MIN_FRAMES,
        Argument,
        "target frame count {target} < {MIN_FRAMES}"
    );
    ensure!(
        seq.frames() >= MIN_FRAMES,
        Argument,
        "cannot resample a clip of {} frames",
        seq.frames()
    );
    let (t_n, v_n, c_n) = seq.shape();
    if t_n == target {
        return Ok(seq.clone());
    }
    let mut data = Vec::with_capacity(target * v_n * c_n);
    let span = (t_n - 1) as f64 / (target - 1) as f64;
    for i in 0..target {
        let pos = i as f64 * span;
        let lo = (pos.floor() as usize).min(t_n - 1);
        let hi = (lo + 1).min(t_n - 1);
        let w = pos - lo as f64;
        for v in 0..v_n {
            for c in 0..c_n {
                let a = seq.get(lo, v, c) as f64;
                let b = seq.get(hi, v, c) as f64;
                data.push(if w == 0.0 { a as f32 } else { (a + (b - a) * w) as f32 });
            }
        }
    }
    Ok(ActionSequence::new(target, v_n, c_n, data)?
        .with_label(seq.label)
        .with_subject(seq.subject))
}
