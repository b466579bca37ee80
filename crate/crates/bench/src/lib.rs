//! Fixtures shared by the criterion benchmarks under `benches/`.

use attnsparse_core::entmax::EntmaxParams;
use attnsparse_core::harness::{generate_instances, Generator, HeadInstance, SyntheticSpec};
use attnsparse_core::projection::PairInstance;
use attnsparse_core::{extract_graph, PairDataset, ScoreMatrix};

/// Gaussian-mixture heads with 4 latent clusters.
pub fn mixture_heads(n: usize, d: usize, count: usize, seed: u64) -> Vec<HeadInstance> {
    generate_instances(&SyntheticSpec {
        n,
        m: n,
        d,
        generator: Generator::GaussianMixture {
            clusters: 4,
            center_norm: 4.0,
            spread: 0.5,
        },
        num_layers: 1,
        num_heads: 1,
        num_instances: count,
        alpha: 1.5,
        causal: false,
        seed,
    })
    .expect("valid synthetic spec")
}

pub fn mixture_head(n: usize, d: usize, seed: u64) -> ScoreMatrix {
    mixture_heads(n, d, 1, seed).remove(0).sm
}

/// Pair dataset built from the gold graphs of `heads`.
pub fn pair_dataset(heads: &[HeadInstance], seed: u64) -> PairDataset {
    let params = EntmaxParams::default();
    let instances = heads
        .iter()
        .map(|h| {
            let g = extract_graph(&h.sm, &params).expect("finite scores");
            PairInstance::new(h.sm.queries().clone(), h.sm.keys().clone(), g).expect("shapes agree")
        })
        .collect();
    PairDataset::new(instances, 0, seed).expect("valid dataset")
}
