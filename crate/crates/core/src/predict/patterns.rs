//! Fixed attention patterns: sliding window, global tokens, random blocks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{graph_union, AttentionGraph};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatternConfig {
    /// Window width w; tokens attend within ±⌊w/2⌋. Zero disables the window.
    pub window: usize,
    /// Positions that attend to, and are attended by, every position.
    pub global_tokens: Vec<usize>,
    pub causal: bool,
}

impl PatternConfig {
    pub fn window(window: usize, causal: bool) -> Self {
        Self {
            window,
            global_tokens: Vec::new(),
            causal,
        }
    }
}

/// How global tokens are chosen when only their number is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalSelection {
    /// The first `count` positions.
    Prefix,
    /// `count` positions drawn without replacement.
    Random,
}

pub fn select_global_tokens(
    n: usize,
    count: usize,
    selection: GlobalSelection,
    seed: u64,
) -> Vec<usize> {
    let count = count.min(n);
    match selection {
        GlobalSelection::Prefix => (0..count).collect(),
        GlobalSelection::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, n, count).into_vec();
            picked.sort_unstable();
            picked
        }
    }
}

pub fn window_global_graph(n: usize, m: usize, pc: &PatternConfig) -> Result<AttentionGraph> {
    if let Some(&g) = pc.global_tokens.iter().find(|&&g| g >= n) {
        return Err(Error::domain(format!(
            "global token {g} out of range for {n} queries"
        )));
    }
    let half = (pc.window > 0).then_some(pc.window / 2);
    let mut is_global_key = vec![false; m];
    for &g in &pc.global_tokens {
        if g < m {
            is_global_key[g] = true;
        }
    }
    AttentionGraph::from_row_masks(n, m, pc.causal, |i, row| {
        if pc.global_tokens.contains(&i) {
            row.iter_mut().for_each(|b| *b = true);
            return;
        }
        if let Some(h) = half {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(m);
            for b in row.iter_mut().take(hi).skip(lo) {
                *b = true;
            }
        }
        for (b, &g) in row.iter_mut().zip(&is_global_key) {
            *b |= g;
        }
    })
}

/// BigBird-style random attention: every block row of queries attends to
/// `num_blocks` distinct random key blocks, never its own diagonal block.
pub fn bigbird_random_blocks(
    n: usize,
    m: usize,
    num_blocks: usize,
    block_size: usize,
    causal: bool,
    seed: u64,
) -> Result<AttentionGraph> {
    if block_size == 0 {
        return Err(Error::domain("block size must be positive"));
    }
    let q_blocks = n.div_ceil(block_size);
    let k_blocks = m.div_ceil(block_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for bi in 0..q_blocks {
        let candidates: Vec<usize> = (0..k_blocks)
            .filter(|&bj| bj != bi && (!causal || bj < bi))
            .collect();
        let take = num_blocks.min(candidates.len());
        for pick in sample(&mut rng, candidates.len(), take) {
            let bj = candidates[pick];
            for i in bi * block_size..((bi + 1) * block_size).min(n) {
                for j in bj * block_size..((bj + 1) * block_size).min(m) {
                    edges.push((i as u32, j as u32));
                }
            }
        }
    }
    AttentionGraph::from_edges_filtered(n, m, causal, edges)
}

/// Adds the window and global pattern of `pc` to a predicted graph.
pub fn combine_with_patterns(
    learned: &AttentionGraph,
    pc: &PatternConfig,
) -> Result<AttentionGraph> {
    if learned.causal() != pc.causal {
        return Err(Error::domain(
            "pattern causality differs from the learned graph",
        ));
    }
    let pattern = window_global_graph(learned.n(), learned.m(), pc)?;
    graph_union(learned, &pattern)
}
