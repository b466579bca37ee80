//! Learned low-dimensional projections of queries and keys.
//!
//! One affine map `x ↦ Wx + b` per head is shared by queries and keys and is
//! trained with a triplet hinge loss: for a positive pair (q, k_P) taken from a
//! ground-truth graph and a negative key k_N drawn uniformly among keys the
//! query does not attend to,
//!
//! ```text
//! L = [ω + ‖q′ − k′_P‖² − ‖q′ − k′_N‖²]₊
//! ```
//!
//! Optimization is mini-batch Adam over shuffled positives.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{admissible, AttentionGraph};
use crate::linalg::{sq_dist, Matrix};
use crate::textio::{fmt_f64, parse_f64};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    w: Matrix,
    b: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::domain(format!(
                "bias has length {}, expected {}",
                b.len(),
                w.rows()
            )));
        }
        if w.rows() == 0 || w.rows() >= w.cols() {
            return Err(Error::domain(format!(
                "projection must reduce dimension: r = {}, d = {}",
                w.rows(),
                w.cols()
            )));
        }
        Ok(Self { w, b })
    }

    /// W entries uniform in [−1/√d, 1/√d], zero bias.
    pub fn init(d: usize, r: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = Matrix::zeros(r, d);
        for v in w.as_mut_slice() {
            *v = rng.random_range(-bound..=bound);
        }
        Self::new(w, vec![0.0; r])
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    /// `r·d + r`.
    pub fn param_count(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input has dimension {}, projection expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.project_unchecked(x))
    }

    fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter_rows()
            .zip(&self.b)
            .map(|(row, b)| crate::linalg::dot(row, x) + b)
            .collect()
    }

    /// Projects every row of `x`.
    pub fn project_rows(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::domain(format!(
                "input has dimension {}, projection expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for (i, row) in x.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.project_unchecked(row));
        }
        Ok(out)
    }

    /// Checkpoint text: header `d r`, then r lines holding a row of W followed by its bias.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.input_dim(), self.output_dim());
        for (row, b) in self.w.iter_rows().zip(&self.b) {
            let mut first = true;
            for v in row.iter().chain(std::iter::once(b)) {
                if !first {
                    s.push(' ');
                }
                first = false;
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, format!("bad header {header:?}")))?;
        let [d, r] = dims[..] else {
            return Err(Error::parse(path, 1, "header needs `d r`"));
        };
        let mut w = Matrix::zeros(r, d);
        let mut b = vec![0.0; r];
        for (row, bias) in b.iter_mut().enumerate() {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, row + 2, "missing projection row"))?;
            let vals = line
                .split_whitespace()
                .map(|t| parse_f64(t, path, lineno + 1))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != d + 1 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {} values, found {}", d + 1, vals.len()),
                ));
            }
            w.row_mut(row).copy_from_slice(&vals[..d]);
            *bias = vals[d];
        }
        if let Some((lineno, _)) = lines.next() {
            return Err(Error::parse(path, lineno + 1, "trailing data"));
        }
        Self::new(w, b).map_err(|e| Error::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }
}

/// `max(0, ω + ‖q′ − k′_P‖² − ‖q′ − k′_N‖²)`.
pub fn hinge_loss(q: &[f64], k_pos: &[f64], k_neg: &[f64], margin: f64) -> f64 {
    (margin + sq_dist(q, k_pos) - sq_dist(q, k_neg)).max(0.0)
}

/// Gradient of the hinge loss with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub loss: f64,
}

impl HeadGrad {
    fn zeros(r: usize, d: usize) -> Self {
        Self {
            w: Matrix::zeros(r, d),
            b: vec![0.0; r],
            loss: 0.0,
        }
    }
}

/// Analytic gradient of the triplet hinge through the shared affine map.
///
/// At or below the hinge (loss = 0) the zero subgradient is returned.
pub fn hinge_grad(
    head: &ProjectionHead,
    q: &[f64],
    k_pos: &[f64],
    k_neg: &[f64],
    margin: f64,
) -> Result<HeadGrad> {
    let qp = head.project(q)?;
    let pp = head.project(k_pos)?;
    let np = head.project(k_neg)?;
    let (r, d) = (head.output_dim(), head.input_dim());
    let mut grad = HeadGrad::zeros(r, d);
    let raw = margin + sq_dist(&qp, &pp) - sq_dist(&qp, &np);
    if raw <= 0.0 {
        return Ok(grad);
    }
    grad.loss = raw;
    for a in 0..r {
        // ∂L/∂q′ = 2(k′_N − k′_P), ∂L/∂k′_P = −2(q′ − k′_P), ∂L/∂k′_N = 2(q′ − k′_N)
        let gq = 2.0 * (np[a] - pp[a]);
        let gp = -2.0 * (qp[a] - pp[a]);
        let gn = 2.0 * (qp[a] - np[a]);
        let row = grad.w.row_mut(a);
        for c in 0..d {
            row[c] = gq * q[c] + gp * k_pos[c] + gn * k_neg[c];
        }
        grad.b[a] = gq + gp + gn;
    }
    Ok(grad)
}

/// Queries, keys and the ground-truth graph connecting them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInstance {
    pub queries: Matrix,
    pub keys: Matrix,
    pub graph: AttentionGraph,
}

impl PairInstance {
    pub fn new(queries: Matrix, keys: Matrix, graph: AttentionGraph) -> Result<Self> {
        if queries.rows() != graph.n() || keys.rows() != graph.m() {
            return Err(Error::domain(format!(
                "graph is {}x{} but there are {} queries and {} keys",
                graph.n(),
                graph.m(),
                queries.rows(),
                keys.rows()
            )));
        }
        if queries.cols() != keys.cols() {
            return Err(Error::domain("query and key dimensions differ"));
        }
        Ok(Self {
            queries,
            keys,
            graph,
        })
    }

    /// Number of admissible keys for `query` that are not connected to it.
    fn negative_count(&self, query: usize) -> usize {
        let adm = admissible(self.graph.causal(), query, self.graph.m());
        adm - self.graph.row(query).count()
    }
}

/// Index of one positive (query, key) pair inside a [`PairDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub instance: u32,
    pub query: u32,
    pub key: u32,
}

/// Positive pairs drawn from ground-truth graphs, with the instances they
/// came from kept around for negative sampling.
#[derive(Debug, Clone)]
pub struct PairDataset {
    instances: Vec<PairInstance>,
    positives: Vec<PairRef>,
    pub rng_seed: u64,
}

impl PairDataset {
    /// Collects every edge of every instance with more than `min_tokens` queries.
    pub fn new(instances: Vec<PairInstance>, min_tokens: usize, rng_seed: u64) -> Result<Self> {
        let instances: Vec<PairInstance> = instances
            .into_iter()
            .filter(|inst| inst.queries.rows() > min_tokens)
            .collect();
        if let Some(first) = instances.first() {
            let d = first.queries.cols();
            if instances.iter().any(|inst| inst.queries.cols() != d) {
                return Err(Error::domain("instances have different head dimensions"));
            }
        }
        let positives = instances
            .iter()
            .enumerate()
            .flat_map(|(t, inst)| {
                inst.graph.edges().iter().map(move |&(i, j)| PairRef {
                    instance: t as u32,
                    query: i,
                    key: j,
                })
            })
            .collect();
        Ok(Self {
            instances,
            positives,
            rng_seed,
        })
    }

    pub fn instances(&self) -> &[PairInstance] {
        &self.instances
    }

    pub fn positives(&self) -> &[PairRef] {
        &self.positives
    }

    pub fn dim(&self) -> Option<usize> {
        self.instances.first().map(|i| i.queries.cols())
    }

    pub fn query_vec(&self, p: &PairRef) -> &[f64] {
        self.instances[p.instance as usize]
            .queries
            .row(p.query as usize)
    }

    pub fn key_vec(&self, instance: u32, key: usize) -> &[f64] {
        self.instances[instance as usize].keys.row(key)
    }

    /// Draws a key index uniformly among the admissible keys not connected to
    /// the query of `p`. `None` means the query attends to every key and the
    /// pair is skipped.
    pub fn sample_negative(&self, p: &PairRef, rng: &mut impl Rng) -> Option<usize> {
        let inst = &self.instances[p.instance as usize];
        let q = p.query as usize;
        let eligible = inst.negative_count(q);
        if eligible == 0 {
            return None;
        }
        let mut target = rng.random_range(0..eligible);
        let mut neighbors = inst.graph.row(q).peekable();
        for j in 0..admissible(inst.graph.causal(), q, inst.graph.m()) {
            if neighbors.peek() == Some(&j) {
                neighbors.next();
                continue;
            }
            if target == 0 {
                return Some(j);
            }
            target -= 1;
        }
        unreachable!("negative count and row scan disagree")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 16,
            negatives_per_positive: 1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "batch size and negatives per positive must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean hinge loss of every optimizer step, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub batch_losses: Vec<f64>,
    pub skipped_pairs: usize,
}

impl TrainReport {
    fn mean_of(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    /// Mean loss over the first `frac` of batches (at least one).
    pub fn head_loss(&self, frac: f64) -> f64 {
        let k = ((self.batch_losses.len() as f64 * frac).ceil() as usize).max(1);
        Self::mean_of(&self.batch_losses[..k.min(self.batch_losses.len())])
    }

    /// Mean loss over the last `frac` of batches (at least one).
    pub fn tail_loss(&self, frac: f64) -> f64 {
        let len = self.batch_losses.len();
        let k = ((len as f64 * frac).ceil() as usize).max(1).min(len);
        Self::mean_of(&self.batch_losses[len - k..])
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Trains a `d → r` head on `ds`.
pub fn train_projection(
    ds: &PairDataset,
    cfg: &TrainConfig,
    d: usize,
    r: usize,
) -> Result<(ProjectionHead, TrainReport)> {
    cfg.validate()?;
    if ds.positives().is_empty() {
        return Err(Error::domain("training set has no positive pairs"));
    }
    if ds.dim() != Some(d) {
        return Err(Error::domain(format!(
            "dataset dimension {:?} does not match d = {d}",
            ds.dim()
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(ds.rng_seed);
    let mut head = ProjectionHead::init(d, r, &mut init_rng)?;

    let n_params = r * d + r;
    let mut adam = Adam::new(n_params);
    let mut params = vec![0.0; n_params];
    let mut grad_flat = vec![0.0; n_params];
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..ds.positives().len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut init_rng);
        for batch in order.chunks(cfg.batch_size) {
            grad_flat.iter_mut().for_each(|g| *g = 0.0);
            let mut loss_sum = 0.0;
            let mut triples = 0usize;
            for &idx in batch {
                let p = &ds.positives()[idx];
                let q = ds.query_vec(p);
                let kp = ds.key_vec(p.instance, p.key as usize);
                for _ in 0..cfg.negatives_per_positive {
                    let Some(neg) = ds.sample_negative(p, &mut neg_rng) else {
                        report.skipped_pairs += 1;
                        break;
                    };
                    let kn = ds.key_vec(p.instance, neg);
                    let g = hinge_grad(&head, q, kp, kn, cfg.margin)?;
                    loss_sum += g.loss;
                    triples += 1;
                    for (acc, v) in grad_flat.iter_mut().zip(g.w.as_slice().iter().chain(&g.b)) {
                        *acc += v;
                    }
                }
            }
            if triples == 0 {
                continue;
            }
            let scale = 1.0 / triples as f64;
            grad_flat.iter_mut().for_each(|g| *g *= scale);
            report.batch_losses.push(loss_sum * scale);

            params[..r * d].copy_from_slice(head.w.as_slice());
            params[r * d..].copy_from_slice(&head.b);
            adam.step(&mut params, &grad_flat, cfg.learning_rate);
            head.w.as_mut_slice().copy_from_slice(&params[..r * d]);
            head.b.copy_from_slice(&params[r * d..]);
        }
    }
    Ok((head, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            ProjectionHead::init(1024, 4, &mut rng)
                .unwrap()
                .param_count(),
            4100
        );
        assert_eq!(
            ProjectionHead::init(64, 4, &mut rng).unwrap().param_count(),
            260
        );
    }

    #[test]
    fn project_examples() {
        let zero = ProjectionHead::new(Matrix::zeros(2, 3), vec![0.0; 2]).unwrap();
        assert_eq!(zero.project(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let w = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let trunc = ProjectionHead::new(w, vec![0.0; 2]).unwrap();
        assert_eq!(trunc.project(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(trunc.project(&[1.0]).is_err());
        assert!(ProjectionHead::new(Matrix::zeros(3, 3), vec![0.0; 3]).is_err());
    }

    #[test]
    fn hinge_examples() {
        let margin = 1.0;
        assert_eq!(
            hinge_loss(&[0.3, 0.1], &[1.0, 2.0], &[1.0, 2.0], margin),
            margin
        );
        assert_eq!(
            hinge_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0 + 2f64.sqrt()], margin),
            0.0
        );
        assert_eq!(hinge_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 1.0), 1.0);
    }

    #[test]
    fn zero_head_sits_on_margin() {
        let head = ProjectionHead::new(Matrix::zeros(2, 3), vec![0.0; 2]).unwrap();
        let g = hinge_grad(
            &head,
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            1.0,
        )
        .unwrap();
        assert_eq!(g.loss, 1.0);
        assert!(g.w.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_gradient_below_hinge() {
        let w = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let head = ProjectionHead::new(w, vec![0.0; 2]).unwrap();
        let g = hinge_grad(
            &head,
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
            &[5.0, 0.0, 0.0],
            1.0,
        )
        .unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.w.as_slice().iter().chain(&g.b).all(|&v| v == 0.0));
    }

    fn row_graph(keys: usize, connected: &[usize]) -> PairInstance {
        let q = Matrix::zeros(1, 2);
        let k = Matrix::zeros(keys, 2);
        let edges = connected.iter().map(|&j| (0, j as u32)).collect();
        PairInstance::new(
            q,
            k,
            AttentionGraph::from_edges(1, keys, false, edges).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_eligible_negative() {
        let ds = PairDataset::new(vec![row_graph(4, &[0, 1, 3])], 0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in ds.positives() {
            for _ in 0..20 {
                assert_eq!(ds.sample_negative(p, &mut rng), Some(2));
            }
        }
    }

    #[test]
    fn fully_connected_query_is_skipped() {
        let ds = PairDataset::new(vec![row_graph(3, &[0, 1, 2])], 0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(ds.sample_negative(&ds.positives()[0], &mut rng), None);
    }

    #[test]
    fn min_tokens_filter() {
        let ds = PairDataset::new(vec![row_graph(3, &[0])], 1, 0).unwrap();
        assert!(ds.positives().is_empty());
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_projection(&ds, &cfg, 2, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut head = ProjectionHead::init(5, 2, &mut rng).unwrap();
        head.b = vec![0.1, -1e-300];
        let text = head.to_text();
        let back = ProjectionHead::parse_text(&text, Path::new("p")).unwrap();
        assert_eq!(back, head);
        assert!(ProjectionHead::parse_text("5 2\n1 2 3\n", Path::new("p")).is_err());
    }
}
