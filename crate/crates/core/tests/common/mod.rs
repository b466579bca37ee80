#![allow(dead_code)]

use attnsparse_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    (0..len).map(|_| dist.sample(rng)).collect()
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_vec(rows, cols, normal_vec(rng, rows * cols, std)).unwrap()
}

/// Threshold τ with Σ_j [(α−1)z_j − τ]₊^{1/(α−1)} = 1, by plain bisection.
pub fn oracle_tau(z: &[f64], alpha: f64) -> f64 {
    let am1 = alpha - 1.0;
    let mass = |tau: f64| -> f64 {
        z.iter()
            .map(|&v| (am1 * v - tau).max(0.0).powf(1.0 / am1))
            .sum()
    };
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) * am1;
    let (mut lo, mut hi) = (top - 1.0, top);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn oracle_entmax(z: &[f64], alpha: f64) -> Vec<f64> {
    let tau = oracle_tau(z, alpha);
    let am1 = alpha - 1.0;
    z.iter()
        .map(|&v| (am1 * v - tau).max(0.0).powf(1.0 / am1))
        .collect()
}

/// Support of a probability vector from the oracle: strictly positive entries
/// clear of the bisection noise floor.
pub fn oracle_support(p: &[f64]) -> Vec<usize> {
    (0..p.len()).filter(|&j| p[j] > 1e-9).collect()
}

/// Queries and keys split between two blobs at ±`sep`·e₀; gold pairs are the
/// within-blob pairs. Returns (queries, keys, graph) triples.
pub fn two_blob_instances(
    seed: u64,
    instances: usize,
    tokens: usize,
    d: usize,
    sep: f64,
) -> Vec<attnsparse_core::projection::PairInstance> {
    use attnsparse_core::projection::PairInstance;
    use attnsparse_core::AttentionGraph;
    let mut r = rng(seed);
    (0..instances)
        .map(|_| {
            let side_q: Vec<bool> = (0..tokens).map(|_| r.random_bool(0.5)).collect();
            let side_k: Vec<bool> = (0..tokens).map(|_| r.random_bool(0.5)).collect();
            let mut blob = |sides: &[bool]| {
                let mut x = normal_matrix(&mut r, tokens, d, 0.5);
                for (t, &s) in sides.iter().enumerate() {
                    x.row_mut(t)[0] += if s { sep } else { -sep };
                }
                x
            };
            let q = blob(&side_q);
            let k = blob(&side_k);
            let mut edges = Vec::new();
            for i in 0..tokens {
                for j in 0..tokens {
                    if side_q[i] == side_k[j] {
                        edges.push((i as u32, j as u32));
                    }
                }
            }
            let g = AttentionGraph::from_edges(tokens, tokens, false, edges).unwrap();
            PairInstance::new(q, k, g).unwrap()
        })
        .collect()
}
