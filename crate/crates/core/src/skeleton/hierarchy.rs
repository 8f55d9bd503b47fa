use crate::error::{ensure, Error, Result};

use super::graph::{check_parts, normalized_adjacency, ntu, SkeletonGraph, PART_COUNT};

/// Number of feature levels: three spatial resolutions plus one temporal-only level.
pub const FEATURE_LEVELS: usize = 4;

/// Frames are halved at every downsampling step.
pub const TEMPORAL_STRIDE: usize = 2;

/// One spatial resolution of the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLevel {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub normalized_adjacency: Vec<f64>,
    /// Node → body part.
    pub part_of: Vec<usize>,
}

/// Coarsening maps 25 → 10 → 5 between skeleton resolutions.
///
/// Feature level `l` lives on spatial level `min(l, 2)`; the step from level 2
/// to level 3 only halves the frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingHierarchy {
    levels: Vec<GraphLevel>,
    merge_maps: Vec<Vec<usize>>,
}

impl PoolingHierarchy {
    /// Builds the hierarchy from a fine→coarse map for the first step; the
    /// second step merges level-1 nodes into their body parts.
    pub fn from_maps(
        graph: &SkeletonGraph,
        level1_of: &[usize],
        part_of_level1: &[usize],
    ) -> Result<Self> {
        let v0 = graph.joint_count();
        ensure!(
            level1_of.len() == v0,
            Config,
            "level-1 map covers {} joints, expected {v0}",
            level1_of.len()
        );
        let v1 = part_of_level1.len();
        check_surjective(level1_of, v1)?;
        check_parts(part_of_level1, PART_COUNT)?;
        for (j, (&coarse, &part)) in level1_of.iter().zip(graph.part_of()).enumerate() {
            if part_of_level1[coarse] != part {
                return Err(Error::Config(format!(
                    "joint {j} is in part {part} but its level-1 node {coarse} is in part {}",
                    part_of_level1[coarse]
                )));
            }
        }

        let e0 = graph.edges().to_vec();
        let e1 = contract_edges(&e0, level1_of);
        let e2 = contract_edges(&e1, part_of_level1);
        let identity: Vec<usize> = (0..PART_COUNT).collect();
        let levels = vec![
            GraphLevel {
                node_count: v0,
                normalized_adjacency: graph.normalized_adjacency().to_vec(),
                edges: e0,
                part_of: graph.part_of().to_vec(),
            },
            GraphLevel {
                node_count: v1,
                normalized_adjacency: normalized_adjacency(v1, &e1),
                edges: e1,
                part_of: part_of_level1.to_vec(),
            },
            GraphLevel {
                node_count: PART_COUNT,
                normalized_adjacency: normalized_adjacency(PART_COUNT, &e2),
                edges: e2,
                part_of: identity.clone(),
            },
        ];
        Ok(Self {
            levels,
            merge_maps: vec![level1_of.to_vec(), part_of_level1.to_vec(), identity],
        })
    }

    /// Spatial level backing feature level `level`.
    pub fn spatial(&self, level: usize) -> &GraphLevel {
        &self.levels[level.min(self.levels.len() - 1)]
    }

    pub fn node_count(&self, level: usize) -> usize {
        self.spatial(level).node_count
    }

    /// Map from nodes of feature level `level` to nodes of `level + 1`.
    pub fn merge_map(&self, level: usize) -> Result<&[usize]> {
        self.merge_maps
            .get(level)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Argument(format!("no merge map below level {level}")))
    }

    /// Node counts per spatial level, finest first.
    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.node_count).collect()
    }
}

/// The fixed anatomical 25 → 10 → 5 hierarchy for an NTU-layout skeleton.
pub fn build_hierarchy(graph: &SkeletonGraph) -> Result<PoolingHierarchy> {
    ensure!(
        graph.joint_count() == ntu::JOINTS,
        Config,
        "fixed coarsening table needs {} joints, graph has {}",
        ntu::JOINTS,
        graph.joint_count()
    );
    PoolingHierarchy::from_maps(graph, &ntu::LEVEL1_OF, &ntu::PART_OF_LEVEL1)
}

fn check_surjective(map: &[usize], coarse: usize) -> Result<()> {
    let mut hit = vec![false; coarse];
    for (i, &c) in map.iter().enumerate() {
        ensure!(c < coarse, Config, "node {i} maps to {c} >= {coarse}");
        hit[c] = true;
    }
    if let Some(c) = hit.iter().position(|h| !h) {
        return Err(Error::Config(format!("coarse node {c} has no members")));
    }
    Ok(())
}

/// Contracts an edge list under a node map, dropping self loops and duplicates.
pub fn contract_edges(edges: &[(usize, usize)], map: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in edges {
        let (ca, cb) = (map[a], map[b]);
        if ca == cb {
            continue;
        }
        let e = (ca.min(cb), ca.max(cb));
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out
}
