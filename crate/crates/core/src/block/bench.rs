//! Dense versus block-sparse entmax attention: probabilities, operation
//! counts and wall-clock timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    chunk_project, select_blocks_v1, select_blocks_v2, BlockLayout, BlockVariant, ChunkedGraph,
};
use crate::entmax::{entmax, EntmaxParams};
use crate::error::{Error, Result};
use crate::graph::{extract_graph, recall, sparsity, AttentionGraph, ScoreMatrix};
use crate::linalg::{dot, Matrix};
use crate::predict::Centroids;
use crate::projection::ProjectionHead;

/// Fitted pieces the block path needs to choose blocks.
#[derive(Debug, Clone)]
pub struct BlockSelector {
    pub head: ProjectionHead,
    /// Required for [`BlockVariant::V2`].
    pub centroids: Option<Centroids>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub z: usize,
    pub top_k: usize,
    pub window: usize,
    pub repeats: usize,
    pub variant: BlockVariant,
    pub alpha: f64,
}

/// Work done by one block-sparse evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCounters {
    /// Key blocks scored, summed over query blocks.
    pub scored_blocks: usize,
    /// Of the scored blocks, those pulled in by the window.
    pub window_blocks: usize,
    /// Token pairs whose score was computed.
    pub scored_pairs: usize,
    /// Multiply-adds spent on token scores (2d per pair).
    pub score_flops: u64,
    /// Pooling, projection and block ranking.
    pub selection_flops: u64,
}

/// Dense attention: every admissible score, then row-wise entmax.
pub fn dense_attention(sm: &ScoreMatrix, params: &EntmaxParams) -> Result<(Matrix, u64)> {
    let mut out = Matrix::zeros(sm.n(), sm.m());
    let mut flops = 0u64;
    for i in 0..sm.n() {
        let scores = sm.row_scores(i);
        flops += 2 * (scores.len() * sm.dim()) as u64;
        let p = entmax(&scores, params)?;
        out.row_mut(i)[..p.len()].copy_from_slice(p.as_slice());
    }
    Ok((out, flops))
}

fn select(
    sm: &ScoreMatrix,
    selector: &BlockSelector,
    layout: &BlockLayout,
    cfg: &BenchConfig,
    counters: &mut BlockCounters,
) -> Result<ChunkedGraph> {
    let (d, r) = (sm.dim(), selector.head.output_dim());
    let (nb, mb) = (layout.n_blocks(), layout.m_blocks());
    let qb = chunk_project(sm.queries(), layout.z, &selector.head)?;
    let kb = chunk_project(sm.keys(), layout.z, &selector.head)?;
    counters.selection_flops += ((sm.n() + sm.m()) * d + (nb + mb) * 2 * d * r) as u64;
    match cfg.variant {
        BlockVariant::V1 => {
            counters.selection_flops += (nb * mb * 2 * r) as u64;
            select_blocks_v1(&qb, &kb, cfg.top_k, layout)
        }
        BlockVariant::V2 => {
            let c = selector
                .centroids
                .as_ref()
                .ok_or_else(|| Error::Config("v2 block selection needs centroids".into()))?;
            counters.selection_flops += ((nb + mb) * c.count() * 3 * r) as u64;
            select_blocks_v2(&qb, &kb, c, cfg.top_k.min(c.count()), layout)
        }
    }
}

/// Block-sparse attention: per query block, scores are computed only for key
/// blocks that were selected or that the window touches, and entmax runs on
/// those scores alone.
///
/// Returns the probabilities, the token graph that was scored, and counters.
pub fn block_sparse_attention(
    sm: &ScoreMatrix,
    selector: &BlockSelector,
    cfg: &BenchConfig,
) -> Result<(Matrix, AttentionGraph, BlockCounters)> {
    let params = EntmaxParams::with_alpha(cfg.alpha);
    let layout = BlockLayout::new(sm.n(), sm.m(), cfg.z, sm.causal())?;
    let mut counters = BlockCounters::default();
    let chosen = select(sm, selector, &layout, cfg, &mut counters)?;

    let d = sm.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let half = (cfg.window > 0).then_some(cfg.window / 2);
    let mut out = Matrix::zeros(sm.n(), sm.m());
    let mut edges = Vec::new();
    let mut in_set = vec![false; layout.m_blocks()];
    let mut cols = Vec::with_capacity(sm.m());
    for bi in 0..layout.n_blocks() {
        in_set.iter_mut().for_each(|b| *b = false);
        for bj in chosen.blocks.row(bi) {
            in_set[bj] = true;
        }
        let span = layout.query_span(bi);
        if let Some(h) = half {
            let lo = span.start.saturating_sub(h) / layout.z;
            let hi = ((span.end - 1 + h).min(sm.m().saturating_sub(1))) / layout.z;
            let hi = hi.min(layout.m_blocks() - 1);
            let hi = if layout.causal { hi.min(bi) } else { hi };
            for slot in in_set.iter_mut().take(hi + 1).skip(lo) {
                counters.window_blocks += usize::from(!*slot);
                *slot = true;
            }
        }
        counters.scored_blocks += in_set.iter().filter(|&&b| b).count();

        for i in span {
            cols.clear();
            for (bj, _) in in_set.iter().enumerate().filter(|(_, &b)| b) {
                for j in layout.key_span(bj) {
                    if !layout.causal || j <= i {
                        cols.push(j);
                    }
                }
            }
            if cols.is_empty() {
                continue;
            }
            let qi = sm.queries().row(i);
            let scores: Vec<f64> = cols
                .iter()
                .map(|&j| dot(qi, sm.keys().row(j)) * scale)
                .collect();
            counters.scored_pairs += cols.len();
            counters.score_flops += 2 * (cols.len() * d) as u64;
            let p = entmax(&scores, &params)?;
            let row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(p.as_slice()) {
                row[j] = v;
            }
            edges.extend(cols.iter().map(|&j| (i as u32, j as u32)));
        }
    }
    let scored = AttentionGraph::from_edges(sm.n(), sm.m(), sm.causal(), edges)?;
    Ok((out, scored, counters))
}

/// One CSV row of benchmark output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub n: usize,
    pub d: usize,
    pub z: usize,
    pub top_k: usize,
    pub window: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub flops_dense: u64,
    pub flops_block: u64,
    pub recall: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub dense: BenchRecord,
    pub block: BenchRecord,
    pub counters: BlockCounters,
    /// Largest entrywise gap between block-sparse and dense probabilities.
    pub max_prob_diff: f64,
    /// Dense median time over block median time.
    pub speedup: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median_iqr(mut ms: Vec<f64>) -> (f64, f64) {
    ms.sort_by(f64::total_cmp);
    (
        quantile(&ms, 0.5),
        quantile(&ms, 0.75) - quantile(&ms, 0.25),
    )
}

/// Times dense and block-sparse attention on `sm` and compares them.
pub fn bench_masked_attention(
    sm: &ScoreMatrix,
    selector: &BlockSelector,
    cfg: &BenchConfig,
) -> Result<BenchResult> {
    if cfg.repeats < 3 {
        return Err(Error::domain(format!(
            "benchmark needs at least 3 repeats, got {}",
            cfg.repeats
        )));
    }
    let params = EntmaxParams::with_alpha(cfg.alpha);
    let mut dense_ms = Vec::with_capacity(cfg.repeats);
    let mut block_ms = Vec::with_capacity(cfg.repeats);
    let mut dense = None;
    let mut block = None;
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        let res = dense_attention(sm, &params)?;
        dense_ms.push(t.elapsed().as_secs_f64() * 1e3);
        dense = Some(res);

        let t = Instant::now();
        let res = block_sparse_attention(sm, selector, cfg)?;
        block_ms.push(t.elapsed().as_secs_f64() * 1e3);
        block = Some(res);
    }
    let (dense_probs, flops_dense) = dense.expect("repeats >= 3");
    let (block_probs, scored, counters) = block.expect("repeats >= 3");
    let gold = extract_graph(sm, &params)?;

    let max_prob_diff = dense_probs
        .as_slice()
        .iter()
        .zip(block_probs.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (dense_med, dense_iqr) = median_iqr(dense_ms);
    let (block_med, block_iqr) = median_iqr(block_ms);
    let base = |variant: &str, median_ms, iqr_ms, flops_block, recall, sparsity| BenchRecord {
        variant: variant.to_string(),
        n: sm.n(),
        d: sm.dim(),
        z: cfg.z,
        top_k: cfg.top_k,
        window: cfg.window,
        median_ms,
        iqr_ms,
        flops_dense,
        flops_block,
        recall,
        sparsity,
    };
    Ok(BenchResult {
        dense: base("dense", dense_med, dense_iqr, flops_dense, 1.0, 0.0),
        block: base(
            cfg.variant.name(),
            block_med,
            block_iqr,
            counters.score_flops,
            recall(&scored, &gold)?,
            sparsity(&scored),
        ),
        counters,
        max_prob_diff,
        speedup: if block_med > 0.0 {
            dense_med / block_med
        } else {
            f64::INFINITY
        },
    })
}
