//! Block-chunked prediction: tokens are grouped into contiguous chunks of z,
//! a block pair is positive if any token pair inside it is a gold edge, and
//! each query block attends to a capped number of key blocks.

mod bench;

pub use bench::{
    bench_masked_attention, block_sparse_attention, dense_attention, BenchConfig, BenchRecord,
    BenchResult, BlockCounters, BlockSelector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttentionGraph;
use crate::linalg::{argsort_by, dot, Matrix};
use crate::predict::{cluster_assign_topk, Centroids};
use crate::projection::{PairDataset, PairInstance, ProjectionHead};

/// Token counts and chunk size shared by a block-level graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub n: usize,
    pub m: usize,
    pub z: usize,
    pub causal: bool,
}

impl BlockLayout {
    pub fn new(n: usize, m: usize, z: usize, causal: bool) -> Result<Self> {
        if z == 0 {
            return Err(Error::domain("block size must be at least 1"));
        }
        if causal && n != m {
            return Err(Error::domain("causal layout needs n = m"));
        }
        Ok(Self { n, m, z, causal })
    }

    pub fn n_blocks(&self) -> usize {
        self.n.div_ceil(self.z)
    }

    pub fn m_blocks(&self) -> usize {
        self.m.div_ceil(self.z)
    }

    /// Token range of query block `b` (the last block may be short).
    pub fn query_span(&self, b: usize) -> std::ops::Range<usize> {
        b * self.z..((b + 1) * self.z).min(self.n)
    }

    pub fn key_span(&self, b: usize) -> std::ops::Range<usize> {
        b * self.z..((b + 1) * self.z).min(self.m)
    }

    /// Key blocks query block `bi` may use.
    fn admissible_key_blocks(&self, bi: usize) -> usize {
        if self.causal {
            (bi + 1).min(self.m_blocks())
        } else {
            self.m_blocks()
        }
    }
}

/// A graph over query blocks and key blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedGraph {
    pub layout: BlockLayout,
    pub blocks: AttentionGraph,
}

impl ChunkedGraph {
    pub fn block_edges(&self) -> &[(u32, u32)] {
        self.blocks.edges()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockVariant {
    /// Dot products between all block projections, top-k per query block.
    V1,
    /// Blocks meet if they share one of their top-k closest centroids.
    V2,
}

impl BlockVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BlockVariant::V1 => "v1",
            BlockVariant::V2 => "v2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockBudget {
    pub top_k_blocks: usize,
    pub variant: BlockVariant,
}

/// Block edge (bi, bj) iff some gold edge (i, j) has ⌊i/z⌋ = bi and ⌊j/z⌋ = bj.
pub fn chunk_labels(gold: &AttentionGraph, z: usize) -> Result<ChunkedGraph> {
    let layout = BlockLayout::new(gold.n(), gold.m(), z, gold.causal())?;
    let z32 = z as u32;
    let edges = gold
        .edges()
        .iter()
        .map(|&(i, j)| (i / z32, j / z32))
        .collect();
    let blocks =
        AttentionGraph::from_edges(layout.n_blocks(), layout.m_blocks(), gold.causal(), edges)?;
    Ok(ChunkedGraph { layout, blocks })
}

/// Mean of each chunk of `z` consecutive rows. The last chunk averages only
/// the rows it actually has.
pub fn chunk_pool(x: &Matrix, z: usize) -> Result<Matrix> {
    if z == 0 {
        return Err(Error::domain("block size must be at least 1"));
    }
    let blocks = x.rows().div_ceil(z);
    let mut out = Matrix::zeros(blocks, x.cols());
    for b in 0..blocks {
        let span = b * z..((b + 1) * z).min(x.rows());
        let inv = 1.0 / span.len() as f64;
        let acc = out.row_mut(b);
        for t in span {
            for (a, v) in acc.iter_mut().zip(x.row(t)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

/// Pools chunks by their mean, then projects them.
pub fn chunk_project(x: &Matrix, z: usize, head: &ProjectionHead) -> Result<Matrix> {
    head.project_rows(&chunk_pool(x, z)?)
}

/// Training pairs at chunk level: pooled chunk vectors with chunk labels.
pub fn chunk_pair_instance(
    queries: &Matrix,
    keys: &Matrix,
    gold: &AttentionGraph,
    z: usize,
) -> Result<PairInstance> {
    let cg = chunk_labels(gold, z)?;
    PairInstance::new(chunk_pool(queries, z)?, chunk_pool(keys, z)?, cg.blocks)
}

/// Builds a chunk-level dataset; no minimum-length filter is applied.
pub fn chunk_pair_dataset(
    items: &[(&Matrix, &Matrix, &AttentionGraph)],
    z: usize,
    seed: u64,
) -> Result<PairDataset> {
    let instances = items
        .iter()
        .map(|&(q, k, g)| chunk_pair_instance(q, k, g, z))
        .collect::<Result<Vec<_>>>()?;
    PairDataset::new(instances, 0, seed)
}

fn check_blocks(qb: &Matrix, kb: &Matrix, layout: &BlockLayout) -> Result<()> {
    if qb.rows() != layout.n_blocks() || kb.rows() != layout.m_blocks() {
        return Err(Error::domain(format!(
            "expected {}x{} block vectors, got {}x{}",
            layout.n_blocks(),
            layout.m_blocks(),
            qb.rows(),
            kb.rows()
        )));
    }
    if qb.cols() != kb.cols() {
        return Err(Error::domain("query and key block dimensions differ"));
    }
    Ok(())
}

/// For each query block, the `top_k` admissible key blocks with the largest
/// dot product (lower index on ties). Budgets above the admissible count are clamped.
pub fn select_blocks_v1(
    qb: &Matrix,
    kb: &Matrix,
    top_k: usize,
    layout: &BlockLayout,
) -> Result<ChunkedGraph> {
    check_blocks(qb, kb, layout)?;
    if top_k == 0 {
        return Err(Error::domain("block budget must be at least 1"));
    }
    let mut edges = Vec::new();
    for bi in 0..layout.n_blocks() {
        let adm = layout.admissible_key_blocks(bi);
        let scores: Vec<f64> = (0..adm).map(|bj| dot(qb.row(bi), kb.row(bj))).collect();
        for bj in argsort_by(adm, |bj| -scores[bj]).into_iter().take(top_k) {
            edges.push((bi as u32, bj as u32));
        }
    }
    let blocks =
        AttentionGraph::from_edges(layout.n_blocks(), layout.m_blocks(), layout.causal, edges)?;
    Ok(ChunkedGraph {
        layout: *layout,
        blocks,
    })
}

/// Query block bi meets key block bj iff their `top_k` closest centroids overlap.
pub fn select_blocks_v2(
    qb: &Matrix,
    kb: &Matrix,
    centroids: &Centroids,
    top_k: usize,
    layout: &BlockLayout,
) -> Result<ChunkedGraph> {
    check_blocks(qb, kb, layout)?;
    let q_sets = qb
        .iter_rows()
        .map(|r| cluster_assign_topk(r, centroids, top_k))
        .collect::<Result<Vec<_>>>()?;
    let k_sets = kb
        .iter_rows()
        .map(|r| cluster_assign_topk(r, centroids, top_k))
        .collect::<Result<Vec<_>>>()?;
    let mut edges = Vec::new();
    for (bi, qs) in q_sets.iter().enumerate() {
        for (bj, ks) in k_sets
            .iter()
            .enumerate()
            .take(layout.admissible_key_blocks(bi))
        {
            if qs.iter().any(|c| ks.binary_search(c).is_ok()) {
                edges.push((bi as u32, bj as u32));
            }
        }
    }
    let blocks =
        AttentionGraph::from_edges(layout.n_blocks(), layout.m_blocks(), layout.causal, edges)?;
    Ok(ChunkedGraph {
        layout: *layout,
        blocks,
    })
}

/// Token graph covering every token pair inside a selected block.
pub fn expand_blocks(cg: &ChunkedGraph) -> Result<AttentionGraph> {
    let l = &cg.layout;
    let mut edges = Vec::new();
    for &(bi, bj) in cg.blocks.edges() {
        for i in l.query_span(bi as usize) {
            for j in l.key_span(bj as usize) {
                if !l.causal || j <= i {
                    edges.push((i as u32, j as u32));
                }
            }
        }
    }
    AttentionGraph::from_edges(l.n, l.m, l.causal, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::recall;

    fn graph(n: usize, causal: bool, e: &[(u32, u32)]) -> AttentionGraph {
        AttentionGraph::from_edges(n, n, causal, e.to_vec()).unwrap()
    }

    #[test]
    fn unit_blocks_are_identity() {
        let g = graph(5, true, &[(0, 0), (2, 1), (4, 4), (3, 0)]);
        let cg = chunk_labels(&g, 1).unwrap();
        assert_eq!(cg.blocks, g);
        assert_eq!(expand_blocks(&cg).unwrap(), g);
    }

    #[test]
    fn one_big_block() {
        let g = graph(5, false, &[(3, 1)]);
        assert_eq!(chunk_labels(&g, 8).unwrap().block_edges(), &[(0, 0)]);
        assert!(chunk_labels(&graph(5, false, &[]), 8).unwrap().is_empty());
    }

    #[test]
    fn single_block_edge_expands_to_four() {
        let layout = BlockLayout::new(6, 6, 2, false).unwrap();
        let blocks = AttentionGraph::from_edges(3, 3, false, vec![(1, 2)]).unwrap();
        let g = expand_blocks(&ChunkedGraph { layout, blocks }).unwrap();
        assert_eq!(g.edges(), &[(2, 4), (2, 5), (3, 4), (3, 5)]);
    }

    #[test]
    fn expansion_covers_gold() {
        let g = graph(7, true, &[(0, 0), (3, 2), (6, 0), (6, 5), (5, 5)]);
        for z in 1..=8 {
            let back = expand_blocks(&chunk_labels(&g, z).unwrap()).unwrap();
            assert!(g.is_subset_of(&back));
            assert_eq!(recall(&back, &g).unwrap(), 1.0);
        }
    }

    #[test]
    fn pooling() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let p = chunk_pool(&x, 2).unwrap();
        assert_eq!(p.row(0), &[2.0, 3.0]);
        assert_eq!(p.row(1), &[5.0, 6.0]);
        assert_eq!(chunk_pool(&x, 1).unwrap(), x);
    }

    #[test]
    fn v1_full_budget_and_dominant_match() {
        let layout = BlockLayout::new(6, 6, 2, false).unwrap();
        let qb = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let kb = Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let all = select_blocks_v1(&qb, &kb, 3, &layout).unwrap();
        assert_eq!(all.len(), 9);
        let clamp = select_blocks_v1(&qb, &kb, 10, &layout).unwrap();
        assert_eq!(clamp.len(), 9);
        let top1 = select_blocks_v1(&qb, &kb, 1, &layout).unwrap();
        assert_eq!(top1.block_edges(), &[(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn v2_one_centroid_is_complete() {
        let layout = BlockLayout::new(4, 4, 2, false).unwrap();
        let qb = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let c = Centroids::new(Matrix::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(select_blocks_v2(&qb, &qb, &c, 1, &layout).unwrap().len(), 4);
        assert!(select_blocks_v2(&qb, &qb, &c, 2, &layout).is_err());
    }
}
