mod common;

use attnsparse_core::linalg::sq_dist;
use attnsparse_core::predict::{
    bigbird_random_blocks, buckets_to_graph, cluster_assign_topk, kmeans_fit, lsh_assign,
    quantize_assign, routing_assign, window_global_graph, BucketAssignment, Centroids,
    KMeansConfig, PatternConfig,
};
use attnsparse_core::{AttentionGraph, Matrix};
use common::{normal_matrix, normal_vec, rng};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn quantization_bins_are_balanced() {
    let mut r = rng(41);
    for n in [16, 17, 19] {
        let x = normal_matrix(&mut r, n, 4, 1.0);
        let beta = 4;
        let a = quantize_assign(&x, beta).unwrap();
        let full = n.div_ceil(beta);
        let sizes = a.bucket_sizes();
        assert_eq!(sizes.len(), 16);
        for dim in 0..4 {
            let dim_sizes = &sizes[dim * beta..(dim + 1) * beta];
            let want: Vec<usize> = (0..beta)
                .map(|b| full.min(n.saturating_sub(b * full)))
                .collect();
            assert_eq!(dim_sizes, &want[..]);
            // bins are ordered: every value in bin b is below every value in bin b+1
            let bin_of = |t: usize| a.token(t)[dim] as usize - dim * beta;
            for s in 0..n {
                for t in 0..n {
                    if bin_of(s) < bin_of(t) {
                        assert!(x.get(s, dim) <= x.get(t, dim));
                    }
                }
            }
        }
    }
}

#[test]
fn kmeans_recovers_separated_blob_means() {
    let mut r = rng(42);
    let (per, sigma) = (200, 0.3);
    let means = [[-5.0, 0.0], [5.0, 2.0]];
    let mut rows = Vec::new();
    for m in &means {
        for _ in 0..per {
            let e = normal_vec(&mut r, 2, sigma);
            rows.push([m[0] + e[0], m[1] + e[1]]);
        }
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let fit = kmeans_fit(
        &x,
        2,
        &KMeansConfig {
            seed: 3,
            ..KMeansConfig::default()
        },
    )
    .unwrap();
    let se = 3.0 * sigma / (per as f64).sqrt();
    for m in &means {
        let (b, _) = fit.centroids.nearest(m);
        let c = fit.centroids.get(b);
        assert!(
            (c[0] - m[0]).abs() < se && (c[1] - m[1]).abs() < se,
            "{c:?} vs {m:?}"
        );
    }
}

#[test]
fn top_k_matches_full_sort() {
    let mut r = rng(43);
    for _ in 0..30 {
        let c = Centroids::new(normal_matrix(&mut r, 8, 3, 1.0)).unwrap();
        let x = normal_vec(&mut r, 3, 1.0);
        let mut order: Vec<(f64, usize)> = (0..8).map(|b| (sq_dist(&x, c.get(b)), b)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut want: Vec<u32> = order[..3].iter().map(|&(_, b)| b as u32).collect();
        want.sort_unstable();
        let mut got = cluster_assign_topk(&x, &c, 3).unwrap();
        got.sort_unstable();
        assert_eq!(got, want);
    }
}

#[test]
fn window_and_global_edge_count_by_enumeration() {
    let pc = PatternConfig {
        window: 3,
        global_tokens: vec![0],
        causal: false,
    };
    let g = window_global_graph(6, 6, &pc).unwrap();
    let mut count = 0;
    for i in 0..6i64 {
        for j in 0..6i64 {
            let want = (i - j).abs() <= 1 || i == 0 || j == 0;
            assert_eq!(g.contains(i as usize, j as usize), want);
            count += usize::from(want);
        }
    }
    assert_eq!(g.len(), count);
}

#[test]
fn five_random_unit_blocks_give_five_edges() {
    let g = bigbird_random_blocks(1, 16, 5, 1, false, 9).unwrap();
    assert_eq!(g.len(), 5);
    assert_eq!(g, bigbird_random_blocks(1, 16, 5, 1, false, 9).unwrap());
    for (i, j) in g.edges() {
        assert_ne!(i, j);
    }
    assert!(bigbird_random_blocks(8, 8, 0, 1, false, 9)
        .unwrap()
        .is_empty());
}

#[test]
fn balanced_routing_fills_every_bucket() {
    let mut r = rng(44);
    let x = normal_matrix(&mut r, 30, 4, 1.0);
    let c = Centroids::new(normal_matrix(&mut r, 4, 4, 1.0)).unwrap();
    let a = routing_assign(&x, &c, 30usize.div_ceil(4)).unwrap();
    assert_eq!(a.bucket_sizes(), vec![8; 4]);
}

#[test]
fn lsh_shares_hashes_for_identical_rows() {
    let mut r = rng(45);
    let mut x = normal_matrix(&mut r, 10, 6, 1.0);
    let copy = x.row(3).to_vec();
    x.row_mut(7).copy_from_slice(&copy);
    let a = lsh_assign(&x, 3, 4, 1).unwrap();
    assert_eq!(a.universe(), 12);
    assert_eq!(a.token(3), a.token(7));
    for t in 0..10 {
        assert_eq!(a.token(t).len(), 3);
    }
}

fn assignments() -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<Vec<u32>>)> {
    let set = prop::collection::vec(0u32..6, 0..4);
    (
        prop::collection::vec(set.clone(), 1..8),
        prop::collection::vec(set, 1..8),
    )
}

proptest! {
    #[test]
    fn bucket_graph_matches_pairwise_intersection((qs, ks) in assignments(), causal in any::<bool>()) {
        let (n, m) = (qs.len(), ks.len());
        prop_assume!(!causal || n == m);
        let qa = BucketAssignment::new(6, qs.clone()).unwrap();
        let ka = BucketAssignment::new(6, ks.clone()).unwrap();
        let g = buckets_to_graph(&qa, &ka, causal).unwrap();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if (!causal || j <= i) && qs[i].iter().any(|b| ks[j].contains(b)) {
                    edges.push((i as u32, j as u32));
                }
            }
        }
        prop_assert_eq!(g, AttentionGraph::from_edges(n, m, causal, edges).unwrap());
    }

    #[test]
    fn lsh_is_scale_invariant(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, 5, 4, 1.0);
        let mut y = x.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        let a = lsh_assign(&x, 2, 4, seed).unwrap();
        let b = lsh_assign(&y, 2, 4, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn topk_sets_are_nested(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = Centroids::new(normal_matrix(&mut r, 6, 2, 1.0)).unwrap();
        let x = normal_vec(&mut r, 2, 1.0);
        let k = r.random_range(1..6);
        let small = cluster_assign_topk(&x, &c, k).unwrap();
        let big = cluster_assign_topk(&x, &c, k + 1).unwrap();
        prop_assert!(small.iter().all(|b| big.contains(b)));
    }
}
