//! Predictors of the entmax attention graph and the fixed-pattern baselines
//! they are compared against.
//!
//! Bucket-based predictors map each query and key to a set of bucket ids; a
//! query/key pair becomes an edge iff the two sets intersect.

mod buckets;
mod cluster;
mod distance;
mod kmeans;
mod lsh;
mod patterns;
mod quantize;

pub use buckets::{buckets_to_graph, BucketAssignment};
pub use cluster::{cluster_assign, cluster_assign_topk, routing_assign};
pub use distance::distance_pairing;
pub use kmeans::{kmeans_fit, Centroids, KMeansConfig, KMeansFit};
pub use lsh::{lsh_assign, LshHasher};
pub use patterns::{
    bigbird_random_blocks, combine_with_patterns, select_global_tokens, window_global_graph,
    GlobalSelection, PatternConfig,
};
pub use quantize::{assign_with_bins, fit_bins, quantize_assign, quantize_pair, BinBoundaries};
