use crate::error::{ensure, Result};

/// Number of body parts used by the part-wise normalisation and attention.
pub const PART_COUNT: usize = 5;

/// NTU joint indices (0-based) used throughout the crate.
pub mod ntu {
    pub const JOINTS: usize = 25;
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const LEFT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const LEFT_HAND: usize = 7;
    pub const RIGHT_SHOULDER: usize = 8;
    pub const RIGHT_ELBOW: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const RIGHT_HAND: usize = 11;
    pub const LEFT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const LEFT_ANKLE: usize = 14;
    pub const LEFT_FOOT: usize = 15;
    pub const RIGHT_HIP: usize = 16;
    pub const RIGHT_KNEE: usize = 17;
    pub const RIGHT_ANKLE: usize = 18;
    pub const RIGHT_FOOT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const LEFT_HAND_TIP: usize = 21;
    pub const LEFT_THUMB: usize = 22;
    pub const RIGHT_HAND_TIP: usize = 23;
    pub const RIGHT_THUMB: usize = 24;

    /// Default root joint for normalisation.
    pub const ROOT: usize = SPINE_MID;

    /// Kinect v2 bone list.
    pub const EDGES: [(usize, usize); 24] = [
        (0, 1),
        (1, 20),
        (2, 20),
        (3, 2),
        (4, 20),
        (5, 4),
        (6, 5),
        (7, 6),
        (8, 20),
        (9, 8),
        (10, 9),
        (11, 10),
        (12, 0),
        (13, 12),
        (14, 13),
        (15, 14),
        (16, 0),
        (17, 16),
        (18, 17),
        (19, 18),
        (21, 22),
        (22, 7),
        (23, 24),
        (24, 11),
    ];

    /// Body part of every joint: 0 torso+head, 1 left arm, 2 right arm, 3 left leg, 4 right leg.
    pub const PART_OF: [usize; 25] = [
        0, 0, 0, 0, // spine base, spine mid, neck, head
        1, 1, 1, 1, // left shoulder .. left hand
        2, 2, 2, 2, // right shoulder .. right hand
        3, 3, 3, 3, // left hip .. left foot
        4, 4, 4, 4, // right hip .. right foot
        0, // spine shoulder
        1, 1, // left hand tip, left thumb
        2, 2, // right hand tip, right thumb
    ];

    /// Joint → level-1 node. Level-1 nodes:
    /// 0 head+shoulders, 1 spine+hips, 2/3 left arm proximal/distal,
    /// 4/5 right arm proximal/distal, 6/7 left leg proximal/distal, 8/9 right leg proximal/distal.
    pub const LEVEL1_OF: [usize; 25] = [
        1, 1, 0, 0, // spine base, spine mid, neck, head
        2, 2, 3, 3, // left shoulder, elbow | wrist, hand
        4, 4, 5, 5, // right shoulder, elbow | wrist, hand
        6, 6, 7, 7, // left hip, knee | ankle, foot
        8, 8, 9, 9, // right hip, knee | ankle, foot
        0, // spine shoulder
        3, 3, // left hand tip, thumb
        5, 5, // right hand tip, thumb
    ];

    /// Level-1 node → body part.
    pub const PART_OF_LEVEL1: [usize; 10] = [0, 0, 1, 1, 2, 2, 3, 3, 4, 4];
}

/// Joint topology with its symmetric normalised aggregation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    normalized_adjacency: Vec<f64>,
    part_of: Vec<usize>,
}

impl SkeletonGraph {
    /// Builds a skeleton graph; the edges must form a spanning tree and the
    /// part map must cover all five parts.
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, part_of: Vec<usize>) -> Result<Self> {
        ensure!(joint_count > 0, Argument, "skeleton without joints");
        ensure!(
            part_of.len() == joint_count,
            Config,
            "part map covers {} joints, expected {joint_count}",
            part_of.len()
        );
        ensure!(
            edges.len() + 1 == joint_count,
            Config,
            "{} edges cannot form a tree over {joint_count} joints",
            edges.len()
        );
        for &(a, b) in &edges {
            ensure!(
                a < joint_count && b < joint_count && a != b,
                Config,
                "invalid edge ({a}, {b})"
            );
        }
        ensure!(
            is_connected(joint_count, &edges),
            Config,
            "skeleton edges are not connected"
        );
        check_parts(&part_of, PART_COUNT)?;
        let normalized_adjacency = normalized_adjacency(joint_count, &edges);
        Ok(Self {
            joint_count,
            edges,
            normalized_adjacency,
            part_of,
        })
    }

    /// The 25-joint NTU RGB+D (Kinect v2) skeleton.
    pub fn ntu() -> Self {
        Self::new(ntu::JOINTS, ntu::EDGES.to_vec(), ntu::PART_OF.to_vec())
            .expect("built-in NTU skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-major `V × V` matrix `D^{-1/2} (A + I) D^{-1/2}`.
    pub fn normalized_adjacency(&self) -> &[f64] {
        &self.normalized_adjacency
    }

    pub fn part_of(&self) -> &[usize] {
        &self.part_of
    }
}

pub(crate) fn check_parts(part_of: &[usize], parts: usize) -> Result<()> {
    let mut seen = vec![false; parts];
    for (j, &p) in part_of.iter().enumerate() {
        ensure!(p < parts, Config, "node {j} assigned to part {p} >= {parts}");
        seen[p] = true;
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(crate::Error::Config(format!("body part {p} is empty")));
    }
    Ok(())
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// `D^{-1/2} (A + I) D^{-1/2}` for an undirected edge list; duplicate edges count once.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(i, j) in edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}
