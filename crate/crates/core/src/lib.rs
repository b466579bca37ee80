//! Learned prediction of sparse entmax attention graphs.
//!
//! The crate covers α-entmax and its masked form, ground-truth attention
//! graphs, a low-dimensional metric projection trained with a hinge loss,
//! bucketing predictors built on that projection, block-level selection for
//! block-sparse attention, and a sweep harness reporting sparsity/recall
//! tradeoffs.

pub mod block;
pub mod entmax;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod predict;
pub mod projection;
pub mod seed;
pub mod textio;

pub use entmax::{entmax, masked_entmax, verify_sparse_consistency, EntmaxParams, ProbVector};
pub use error::{Error, Result};
pub use graph::{
    attention_probs, extract_graph, masked_attention_probs, recall, sparsity, AttentionGraph,
    GraphMetrics, ScoreMatrix,
};
pub use linalg::Matrix;
pub use projection::{train_projection, PairDataset, ProjectionHead, TrainConfig};
