use std::hint::black_box;

use attnsparse_bench::{mixture_heads, pair_dataset};
use attnsparse_core::entmax::{entmax, entmax_bisect, EntmaxParams};
use attnsparse_core::harness::pareto_frontier;
use attnsparse_core::predict::{
    buckets_to_graph, cluster_assign, kmeans_fit, lsh_assign, quantize_pair, KMeansConfig,
};
use attnsparse_core::{train_projection, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn scores(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| ((i * 7919) % 101) as f64 / 25.0 - 2.0)
        .collect()
}

fn bench_entmax(c: &mut Criterion) {
    let mut g = c.benchmark_group("entmax");
    for len in [64, 512, 4096] {
        let z = scores(len);
        for alpha in [1.0, 1.5, 2.0] {
            let p = EntmaxParams::with_alpha(alpha);
            g.bench_with_input(
                BenchmarkId::new(format!("exact/{alpha}"), len),
                &z,
                |b, z| b.iter(|| entmax(black_box(z), &p).unwrap()),
            );
        }
        let p = EntmaxParams::with_alpha(1.5);
        g.bench_with_input(BenchmarkId::new("bisect/1.5", len), &z, |b, z| {
            b.iter(|| entmax_bisect(black_box(z), &p).unwrap())
        });
    }
    g.finish();
}

fn bench_buckets(c: &mut Criterion) {
    let heads = mixture_heads(256, 32, 3, 1);
    let ds = pair_dataset(&heads[..2], 1);
    let (head, _) = train_projection(&ds, &TrainConfig::default(), 32, 4).unwrap();
    let q = head.project_rows(heads[2].sm.queries()).unwrap();
    let k = head.project_rows(heads[2].sm.keys()).unwrap();
    let pooled = q.vstack(&k).unwrap();
    let centroids = kmeans_fit(&pooled, 8, &KMeansConfig::default())
        .unwrap()
        .centroids;

    let mut g = c.benchmark_group("predictors");
    g.bench_function("kmeans_fit/B=8", |b| {
        b.iter(|| kmeans_fit(black_box(&pooled), 8, &KMeansConfig::default()).unwrap())
    });
    g.bench_function("clustering/B=8,k=2", |b| {
        b.iter(|| {
            let qa = cluster_assign(&q, &centroids, 2).unwrap();
            let ka = cluster_assign(&k, &centroids, 2).unwrap();
            buckets_to_graph(&qa, &ka, false).unwrap()
        })
    });
    g.bench_function("quantization/beta=4", |b| {
        b.iter(|| {
            let (qa, ka) = quantize_pair(&q, &k, 4).unwrap();
            buckets_to_graph(&qa, &ka, false).unwrap()
        })
    });
    g.bench_function("lsh/4x2", |b| {
        b.iter(|| lsh_assign(black_box(heads[2].sm.queries()), 2, 4, 7).unwrap())
    });
    g.finish();
}

fn bench_pareto(c: &mut Criterion) {
    let pts: Vec<(f64, f64)> = (0..2000)
        .map(|i| {
            (
                ((i * 37) % 997) as f64 / 997.0,
                ((i * 61) % 991) as f64 / 991.0,
            )
        })
        .collect();
    c.bench_function("pareto_frontier/2000", |b| {
        b.iter(|| pareto_frontier(black_box(&pts)).unwrap())
    });
}

criterion_group!(benches, bench_entmax, bench_buckets, bench_pareto);
criterion_main!(benches);
