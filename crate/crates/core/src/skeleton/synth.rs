//! Procedural skeleton corpus: the class decides which joints move and how
//! fast (content), the style decides bone proportions and tempo (morphology).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

use super::graph::ntu::{self, JOINTS};
use super::io::{save_skl, DatasetManifest, ManifestEntry, Split};
use super::sequence::ActionSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: u32,
    pub samples_per_class: usize,
    pub skeleton_styles: u32,
    pub frames: usize,
    /// Fraction of each class tagged `test`; the rest is `train`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            samples_per_class: 100,
            skeleton_styles: 8,
            frames: 64,
            test_fraction: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        ensure!(self.classes >= 2, Argument, "need at least 2 classes, got {}", self.classes);
        ensure!(self.samples_per_class >= 1, Argument, "samples_per_class must be positive");
        ensure!(self.skeleton_styles >= 1, Argument, "skeleton_styles must be positive");
        ensure!(self.frames >= 8, Argument, "clips need at least 8 frames, got {}", self.frames);
        ensure!(
            (0.0..1.0).contains(&self.test_fraction),
            Argument,
            "test_fraction {} outside [0, 1)",
            self.test_fraction
        );
        Ok(())
    }
}

/// Parent of every joint when walking the tree from the spine base.
const PARENT: [usize; JOINTS] = [
    usize::MAX, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 22, 7, 24, 11,
];

/// Joints in an order where every parent precedes its children.
const TOPO_ORDER: [usize; JOINTS] = [
    0, 1, 12, 16, 20, 13, 17, 2, 4, 8, 14, 18, 3, 5, 9, 15, 19, 6, 10, 7, 11, 22, 24, 21, 23,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BoneGroup {
    Torso,
    Shoulder,
    Arm,
    Hip,
    Leg,
}

/// Rest offset from the parent (meters; +x left, +y up, +z forward) and its bone group.
fn rest_offset(j: usize) -> ([f64; 3], BoneGroup) {
    use BoneGroup::*;
    match j {
        1 => ([0.0, 0.26, 0.0], Torso),
        20 => ([0.0, 0.24, 0.0], Torso),
        2 => ([0.0, 0.08, 0.0], Torso),
        3 => ([0.0, 0.13, 0.02], Torso),
        4 => ([0.18, -0.03, 0.0], Shoulder),
        8 => ([-0.18, -0.03, 0.0], Shoulder),
        5 | 9 => ([0.0, -0.28, 0.0], Arm),
        6 | 10 => ([0.0, -0.25, 0.0], Arm),
        7 | 11 => ([0.0, -0.07, 0.0], Arm),
        22 => ([0.03, -0.03, 0.02], Arm),
        24 => ([-0.03, -0.03, 0.02], Arm),
        21 | 23 => ([0.0, -0.05, 0.0], Arm),
        12 => ([0.10, -0.03, 0.0], Hip),
        16 => ([-0.10, -0.03, 0.0], Hip),
        13 | 17 => ([0.0, -0.42, 0.0], Leg),
        14 | 18 => ([0.0, -0.40, 0.0], Leg),
        15 | 19 => ([0.0, -0.05, 0.11], Leg),
        _ => ([0.0, 0.0, 0.0], Torso),
    }
}

/// Morphology of one synthetic performer.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonStyle {
    pub torso: f64,
    pub shoulder: f64,
    pub arm: f64,
    pub hip: f64,
    pub leg: f64,
    pub height: f64,
    pub tempo: f64,
}

impl SkeletonStyle {
    pub fn from_seed(seed: u64, style: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5717_1E00 + style as u64));
        let mut f = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        Self {
            torso: f(0.8, 1.25),
            shoulder: f(0.75, 1.3),
            arm: f(0.75, 1.3),
            hip: f(0.75, 1.3),
            leg: f(0.8, 1.25),
            height: f(0.9, 1.1),
            tempo: f(0.85, 1.18),
        }
    }

    fn factor(&self, g: BoneGroup) -> f64 {
        self.height
            * match g {
                BoneGroup::Torso => self.torso,
                BoneGroup::Shoulder => self.shoulder,
                BoneGroup::Arm => self.arm,
                BoneGroup::Hip => self.hip,
                BoneGroup::Leg => self.leg,
            }
    }

    /// Rest bone length of joint `j` relative to its parent.
    pub fn bone_length(&self, j: usize) -> f64 {
        let (o, g) = rest_offset(j);
        norm(o) * self.factor(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Axis {
    X,
    Z,
}

/// One joint rotation about the rest pose: `amp·sin(2π·freq·u + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oscillator {
    pub joint: usize,
    axis: Axis,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Oscillator {
    pub fn angle(&self, u: f64) -> f64 {
        self.amp * (2.0 * PI * self.freq * u + self.phase).sin()
    }
}

/// Joint-angle program of a class instance; independent of the performer's style.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProgram {
    pub oscillators: Vec<Oscillator>,
    /// Vertical root displacement amplitude (squat-like classes).
    pub bob: f64,
    pub bob_freq: f64,
    pub yaw: f64,
}

const TEMPLATES: usize = 6;

/// Short human-readable name of a class id.
pub fn class_name(class: u32) -> String {
    const NAMES: [&str; TEMPLATES] = ["arm wave", "forward pump", "arms raise", "kick", "squat", "bow"];
    let base = NAMES[class as usize % TEMPLATES];
    match class as usize / TEMPLATES {
        0 => base.to_string(),
        k => format!("{base} v{k}"),
    }
}

fn osc(joint: usize, axis: Axis, amp: f64, freq: f64, phase: f64) -> Oscillator {
    Oscillator {
        joint,
        axis,
        amp,
        freq,
        phase,
    }
}

impl MotionProgram {
    /// Template for `class` with per-instance jitter drawn from `rng`.
    pub fn for_class(class: u32, rng: &mut impl Rng) -> Self {
        use ntu::*;
        let variant = class as usize / TEMPLATES;
        let speed = 1.0 + 0.5 * variant as f64;
        let mirror = variant % 2 == 1;
        let side = |left: usize, right: usize| if mirror { left } else { right };
        let sign = if mirror { -1.0 } else { 1.0 };
        let (mut oscillators, bob) = match class as usize % TEMPLATES {
            0 => (
                vec![
                    osc(side(LEFT_SHOULDER, RIGHT_SHOULDER), Axis::Z, 0.25 * sign, 2.0, 0.0),
                    osc(side(LEFT_ELBOW, RIGHT_ELBOW), Axis::Z, 0.6 * sign, 2.0, 0.0),
                ],
                0.0,
            ),
            1 => (
                vec![
                    osc(side(LEFT_SHOULDER, RIGHT_SHOULDER), Axis::X, 0.3, 2.5, 0.0),
                    osc(side(LEFT_ELBOW, RIGHT_ELBOW), Axis::X, 0.6, 2.5, 0.5),
                ],
                0.0,
            ),
            2 => (
                vec![
                    osc(LEFT_SHOULDER, Axis::X, 0.9, 1.0, 0.0),
                    osc(RIGHT_SHOULDER, Axis::X, 0.9, 1.0, 0.0),
                ],
                0.0,
            ),
            3 => (
                vec![
                    osc(side(LEFT_HIP, RIGHT_HIP), Axis::X, 0.65, 1.5, 0.0),
                    osc(side(LEFT_KNEE, RIGHT_KNEE), Axis::X, 0.5, 1.5, 1.2),
                ],
                0.0,
            ),
            4 => (
                vec![
                    osc(LEFT_HIP, Axis::X, 0.55, 1.0, 0.0),
                    osc(RIGHT_HIP, Axis::X, 0.55, 1.0, 0.0),
                    osc(LEFT_KNEE, Axis::X, 1.0, 1.0, PI),
                    osc(RIGHT_KNEE, Axis::X, 1.0, 1.0, PI),
                ],
                0.22,
            ),
            _ => (
                vec![
                    osc(SPINE_MID, Axis::X, 0.4, 1.0, 0.0),
                    osc(NECK, Axis::X, 0.2, 1.0, 0.0),
                ],
                0.0,
            ),
        };
        let amp_jitter = rng.gen_range(0.85..1.15);
        let phase = rng.gen_range(-0.35..0.35);
        for o in &mut oscillators {
            o.amp *= amp_jitter;
            o.freq *= speed;
            o.phase += phase;
        }
        Self {
            oscillators,
            bob: bob * amp_jitter,
            bob_freq: speed,
            yaw: rng.gen_range(-0.25..0.25),
        }
    }

    /// Renders the program on a performer; `u` runs from 0 to `style.tempo` across the clip.
    pub fn render(&self, style: &SkeletonStyle, frames: usize) -> ActionSequence {
        let mut data = vec![0.0f32; frames * JOINTS * 3];
        let mut local = [IDENTITY; JOINTS];
        let mut global = [IDENTITY; JOINTS];
        let mut pos = [[0.0f64; 3]; JOINTS];
        let yaw = rot_y(self.yaw);
        for t in 0..frames {
            let u = style.tempo * t as f64 / (frames - 1).max(1) as f64;
            local.fill(IDENTITY);
            for o in &self.oscillators {
                let r = match o.axis {
                    Axis::X => rot_x(o.angle(u)),
                    Axis::Z => rot_z(o.angle(u)),
                };
                local[o.joint] = matmul3(&local[o.joint], &r);
            }
            let drop = self.bob * 0.5 * (1.0 - (2.0 * PI * self.bob_freq * u).cos());
            for &j in &TOPO_ORDER {
                if j == ntu::SPINE_BASE {
                    pos[j] = [0.0, 1.0 - drop, 0.0];
                    global[j] = matmul3(&yaw, &local[j]);
                } else {
                    let p = PARENT[j];
                    let (o, g) = rest_offset(j);
                    let f = style.factor(g);
                    let d = apply(&global[p], [o[0] * f, o[1] * f, o[2] * f]);
                    pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
                    global[j] = matmul3(&global[p], &local[j]);
                }
            }
            for (j, p) in pos.iter().enumerate() {
                for c in 0..3 {
                    data[(t * JOINTS + j) * 3 + c] = p[c] as f32;
                }
            }
        }
        ActionSequence::new(frames, JOINTS, 3, data).expect("rendered clip is finite")
    }
}

type Mat3 = [[f64; 3]; 3];
const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generated clip before it is written out.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub class: u32,
    pub index: usize,
    pub style: u32,
    pub split: Split,
    pub program: MotionProgram,
    pub sequence: ActionSequence,
}

/// Generates the whole corpus in memory, ordered by class then index.
pub fn synth_samples(config: &SynthConfig) -> Result<Vec<SynthSample>> {
    config.validate()?;
    let styles: Vec<SkeletonStyle> = (0..config.skeleton_styles)
        .map(|s| SkeletonStyle::from_seed(config.seed, s))
        .collect();
    let n_test = (config.samples_per_class as f64 * config.test_fraction).round() as usize;
    let mut out = Vec::with_capacity(config.classes as usize * config.samples_per_class);
    for class in 0..config.classes {
        for index in 0..config.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, ((class as u64) << 32) | index as u64));
            let style = rng.gen_range(0..config.skeleton_styles);
            let program = MotionProgram::for_class(class, &mut rng);
            let sequence = program
                .render(&styles[style as usize], config.frames)
                .with_label(Some(class))
                .with_subject(Some(style));
            let split = if index >= config.samples_per_class - n_test {
                Split::Test
            } else {
                Split::Train
            };
            out.push(SynthSample {
                class,
                index,
                style,
                split,
                program,
                sequence,
            });
        }
    }
    Ok(out)
}

/// Writes the corpus as `.skl` clips under `out/clips` plus `out/manifest.jsonl`.
pub fn synth_corpus(config: &SynthConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let clips = out.join("clips");
    fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let mut entries = Vec::new();
    for s in synth_samples(config)? {
        let rel = PathBuf::from("clips").join(format!("c{:02}_{:04}.skl", s.class, s.index));
        save_skl(&s.sequence, out.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: s.class,
            subject: Some(s.style),
            split: s.split,
        });
    }
    let manifest = DatasetManifest::new(out, entries);
    manifest.write(out.join("manifest.jsonl"))?;
    Ok(manifest)
}
