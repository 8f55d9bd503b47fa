//! Network building blocks and the two models built from them.

pub mod blocks;

pub use blocks::{
    adain, bp_adain, bp_atn, graph_downsample, graph_upsample, grouped_adain, instance_norm,
    spatial_graph_conv, temporal_conv, Attention, AttentionWeights, FeatureMap, Topology,
};

#[cfg(test)]
mod block_tests;
