mod common;

use attnsparse_core::linalg::sq_dist;
use attnsparse_core::projection::{hinge_grad, hinge_loss, PairInstance, PairRef};
use attnsparse_core::{
    train_projection, AttentionGraph, Matrix, PairDataset, ProjectionHead, TrainConfig,
};
use common::{normal_matrix, normal_vec, rng, two_blob_instances};

#[test]
fn projection_matches_double_loop() {
    let mut r = rng(31);
    let w = normal_matrix(&mut r, 3, 7, 1.0);
    let b = normal_vec(&mut r, 3, 1.0);
    let x = normal_vec(&mut r, 7, 1.0);
    let head = ProjectionHead::new(w.clone(), b.clone()).unwrap();
    let y = head.project(&x).unwrap();
    for a in 0..3 {
        let mut acc = b[a];
        for c in 0..7 {
            acc += w.get(a, c) * x[c];
        }
        assert!((y[a] - acc).abs() < 1e-12);
    }
}

fn loss_at(head: &ProjectionHead, q: &[f64], kp: &[f64], kn: &[f64], margin: f64) -> f64 {
    let (qp, pp, np) = (
        head.project(q).unwrap(),
        head.project(kp).unwrap(),
        head.project(kn).unwrap(),
    );
    hinge_loss(&qp, &pp, &np, margin)
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(32);
    let (d, rr, h) = (6, 3, 1e-5);
    let mut checked = 0;
    while checked < 20 {
        let head = ProjectionHead::new(
            normal_matrix(&mut r, rr, d, 0.5),
            normal_vec(&mut r, rr, 0.5),
        )
        .unwrap();
        let (q, kp, kn) = (
            normal_vec(&mut r, d, 1.0),
            normal_vec(&mut r, d, 1.0),
            normal_vec(&mut r, d, 1.0),
        );
        let margin = 1.0;
        if loss_at(&head, &q, &kp, &kn, margin) < 1e-3 {
            continue;
        }
        let g = hinge_grad(&head, &q, &kp, &kn, margin).unwrap();
        let mut params: Vec<f64> = head.weights().as_slice().to_vec();
        params.extend_from_slice(head.bias());
        let analytic: Vec<f64> = g.w.as_slice().iter().chain(&g.b).copied().collect();
        let rebuild = |p: &[f64]| {
            ProjectionHead::new(
                Matrix::from_vec(rr, d, p[..rr * d].to_vec()).unwrap(),
                p[rr * d..].to_vec(),
            )
            .unwrap()
        };
        for idx in 0..params.len() {
            let mut up = params.clone();
            let mut dn = params.clone();
            up[idx] += h;
            dn[idx] -= h;
            let fd = (loss_at(&rebuild(&up), &q, &kp, &kn, margin)
                - loss_at(&rebuild(&dn), &q, &kp, &kn, margin))
                / (2.0 * h);
            let rel = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-8);
            assert!(
                rel < 1e-5 || (fd - analytic[idx]).abs() < 1e-9,
                "param {idx}: fd {fd} analytic {}",
                analytic[idx]
            );
        }
        checked += 1;
    }
}

#[test]
fn negatives_are_uniform_over_eligible_keys() {
    // query 0 connects to keys 0..4 of 8; keys 4..8 are eligible
    let edges: Vec<(u32, u32)> = (0..4).map(|j| (0, j)).collect();
    let graph = AttentionGraph::from_edges(1, 8, false, edges).unwrap();
    let inst = PairInstance::new(Matrix::zeros(1, 2), Matrix::zeros(8, 2), graph).unwrap();
    let ds = PairDataset::new(vec![inst], 0, 1).unwrap();
    let mut r = rng(33);
    let p = PairRef {
        instance: 0,
        query: 0,
        key: 0,
    };
    let mut counts = [0usize; 8];
    for _ in 0..10_000 {
        counts[ds.sample_negative(&p, &mut r).unwrap()] += 1;
    }
    assert_eq!(counts[..4], [0; 4]);
    for &c in &counts[4..] {
        let f = c as f64 / 10_000.0;
        assert!((0.22..=0.28).contains(&f), "{counts:?}");
    }
}

#[test]
fn two_blob_training_separates_positive_and_negative_distances() {
    let ds = PairDataset::new(two_blob_instances(34, 6, 24, 8, 3.0), 0, 34).unwrap();
    let cfg = TrainConfig {
        rng_seed: 34,
        ..TrainConfig::default()
    };
    let (head, report) = train_projection(&ds, &cfg, 8, 2).unwrap();
    assert!(report.tail_loss(0.1) <= report.head_loss(0.1));
    let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0, 0);
    for inst in ds.instances() {
        let q = head.project_rows(&inst.queries).unwrap();
        let k = head.project_rows(&inst.keys).unwrap();
        for i in 0..q.rows() {
            for j in 0..k.rows() {
                let dist = sq_dist(q.row(i), k.row(j)).sqrt();
                if inst.graph.contains(i, j) {
                    pos += dist;
                    np += 1;
                } else {
                    neg += dist;
                    nn += 1;
                }
            }
        }
    }
    assert!(
        pos / np as f64 + 0.5 < neg / nn as f64,
        "{} vs {}",
        pos / np as f64,
        neg / nn as f64
    );
}

#[test]
fn training_is_bit_deterministic_and_zero_rate_is_inert() {
    let make = || PairDataset::new(two_blob_instances(35, 3, 16, 6, 3.0), 0, 9).unwrap();
    let cfg = TrainConfig {
        rng_seed: 5,
        ..TrainConfig::default()
    };
    let (a, _) = train_projection(&make(), &cfg, 6, 2).unwrap();
    let (b, _) = train_projection(&make(), &cfg, 6, 2).unwrap();
    assert_eq!(a.to_text(), b.to_text());

    let frozen = TrainConfig {
        learning_rate: 0.0,
        ..cfg.clone()
    };
    let (c, _) = train_projection(&make(), &frozen, 6, 2).unwrap();
    let mut init_rng =
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(frozen.rng_seed);
    let init = ProjectionHead::init(6, 2, &mut init_rng).unwrap();
    assert_eq!(c, init);
}
