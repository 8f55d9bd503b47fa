//! Skeleton clips, joint topology, file formats and the synthetic corpus.

pub mod graph;
pub mod hierarchy;
pub mod io;
pub mod ntu;
pub mod sequence;
pub mod synth;
pub mod transform;

pub use graph::{SkeletonGraph, PART_COUNT};
pub use hierarchy::{build_hierarchy, PoolingHierarchy};
pub use io::{load_skl, save_skl, DatasetManifest, ManifestEntry, Split};
pub use ntu::load_ntu_skeleton;
pub use sequence::ActionSequence;
pub use synth::{synth_corpus, synth_samples, SynthConfig};
pub use transform::{normalize, resample_time, NormalizeOptions};
