//! Attention graphs: which query/key pairs receive nonzero entmax probability.

use std::fmt::Write as _;
use std::path::Path;

use crate::entmax::{entmax, masked_entmax, EntmaxParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Query and key matrices for one attention head on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    q: Matrix,
    k: Matrix,
    causal: bool,
}

impl ScoreMatrix {
    pub fn new(q: Matrix, k: Matrix, causal: bool) -> Result<Self> {
        if q.cols() != k.cols() {
            return Err(Error::domain(format!(
                "query dimension {} differs from key dimension {}",
                q.cols(),
                k.cols()
            )));
        }
        if q.cols() == 0 {
            return Err(Error::domain("head dimension must be positive"));
        }
        if causal && q.rows() != k.rows() {
            return Err(Error::domain(format!(
                "causal attention needs n = m, got {} queries and {} keys",
                q.rows(),
                k.rows()
            )));
        }
        if !q.is_finite() || !k.is_finite() {
            return Err(Error::domain("query/key entries must be finite"));
        }
        Ok(Self { q, k, causal })
    }

    pub fn queries(&self) -> &Matrix {
        &self.q
    }

    pub fn keys(&self) -> &Matrix {
        &self.k
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn m(&self) -> usize {
        self.k.rows()
    }

    pub fn dim(&self) -> usize {
        self.q.cols()
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    /// Keys query `i` may attend to.
    pub fn admissible_keys(&self, i: usize) -> usize {
        admissible(self.causal, i, self.m())
    }

    /// Scaled dot-product scores of query `i` against its admissible keys.
    pub fn row_scores(&self, i: usize) -> Vec<f64> {
        let scale = 1.0 / (self.dim() as f64).sqrt();
        let qi = self.q.row(i);
        (0..self.admissible_keys(i))
            .map(|j| dot(qi, self.k.row(j)) * scale)
            .collect()
    }
}

#[inline]
pub(crate) fn admissible(causal: bool, i: usize, m: usize) -> usize {
    if causal {
        (i + 1).min(m)
    } else {
        m
    }
}

/// Dense score block `QKᵀ/√d`. Entries with `j > i` in a causal head are set
/// to `-inf` and reported in [`Scores::is_masked`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub values: Matrix,
    pub causal: bool,
}

impl Scores {
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.causal && j > i
    }
}

pub fn attention_scores(sm: &ScoreMatrix) -> Scores {
    let (n, m) = (sm.n(), sm.m());
    let scale = 1.0 / (sm.dim() as f64).sqrt();
    let mut values = Matrix::zeros(n, m);
    for i in 0..n {
        let qi = sm.q.row(i);
        for j in 0..m {
            let v = if sm.causal && j > i {
                f64::NEG_INFINITY
            } else {
                dot(qi, sm.k.row(j)) * scale
            };
            values.set(i, j, v);
        }
    }
    Scores {
        values,
        causal: sm.causal,
    }
}

/// Sparse bipartite graph between `n` queries and `m` keys.
///
/// Edges are kept sorted by `(query, key)` and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttentionGraph {
    n: usize,
    m: usize,
    causal: bool,
    edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMetrics {
    pub recall: f64,
    pub sparsity: f64,
    pub edge_count: usize,
}

impl AttentionGraph {
    pub fn empty(n: usize, m: usize, causal: bool) -> Result<Self> {
        Self::from_edges(n, m, causal, Vec::new())
    }

    /// Every admissible pair.
    pub fn complete(n: usize, m: usize, causal: bool) -> Result<Self> {
        check_shape(n, m, causal)?;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..admissible(causal, i, m) {
                edges.push((i as u32, j as u32));
            }
        }
        Ok(Self {
            n,
            m,
            causal,
            edges,
        })
    }

    /// Builds a graph from arbitrary edges; out-of-range or non-causal edges are rejected.
    pub fn from_edges(
        n: usize,
        m: usize,
        causal: bool,
        mut edges: Vec<(u32, u32)>,
    ) -> Result<Self> {
        check_shape(n, m, causal)?;
        for &(i, j) in &edges {
            if i as usize >= n || j as usize >= m {
                return Err(Error::domain(format!(
                    "edge ({i}, {j}) out of range for a {n}x{m} graph"
                )));
            }
            if causal && j > i {
                return Err(Error::domain(format!(
                    "edge ({i}, {j}) violates the causal mask"
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            n,
            m,
            causal,
            edges,
        })
    }

    /// Like [`from_edges`](Self::from_edges) but silently drops pairs above the diagonal when causal.
    pub fn from_edges_filtered(
        n: usize,
        m: usize,
        causal: bool,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let edges = edges
            .into_iter()
            .filter(|&(i, j)| !causal || j <= i)
            .collect();
        Self::from_edges(n, m, causal, edges)
    }

    /// Builds a graph from per-row boolean masks over keys.
    pub(crate) fn from_row_masks(
        n: usize,
        m: usize,
        causal: bool,
        row_mask: impl Fn(usize, &mut [bool]),
    ) -> Result<Self> {
        check_shape(n, m, causal)?;
        let mut edges = Vec::new();
        let mut buf = vec![false; m];
        for i in 0..n {
            buf.iter_mut().for_each(|b| *b = false);
            row_mask(i, &mut buf);
            for (j, &b) in buf.iter().enumerate().take(admissible(causal, i, m)) {
                if b {
                    edges.push((i as u32, j as u32));
                }
            }
        }
        Ok(Self {
            n,
            m,
            causal,
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i as u32, j as u32)).is_ok()
    }

    /// Keys connected to query `i`, ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let lo = self.edges.partition_point(|&(a, _)| (a as usize) < i);
        let hi = self.edges.partition_point(|&(a, _)| (a as usize) <= i);
        self.edges[lo..hi].iter().map(|&(_, j)| j as usize)
    }

    pub fn row_mask(&self, i: usize) -> Vec<bool> {
        let mut mask = vec![false; self.m];
        for j in self.row(i) {
            mask[j] = true;
        }
        mask
    }

    /// Number of admissible query/key pairs: `nm`, or `n(n+1)/2` when causal.
    pub fn admissible_pairs(&self) -> usize {
        admissible_pairs(self.n, self.m, self.causal)
    }

    pub fn same_shape(&self, other: &AttentionGraph) -> bool {
        self.n == other.n && self.m == other.m && self.causal == other.causal
    }

    pub fn is_subset_of(&self, other: &AttentionGraph) -> bool {
        self.edges
            .iter()
            .all(|e| other.edges.binary_search(e).is_ok())
    }

    pub fn intersection_len(&self, other: &AttentionGraph) -> usize {
        let (mut a, mut b) = (0, 0);
        let mut count = 0;
        while a < self.edges.len() && b < other.edges.len() {
            match self.edges[a].cmp(&other.edges[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        count
    }

    pub fn metrics(&self, gold: &AttentionGraph) -> Result<GraphMetrics> {
        Ok(GraphMetrics {
            recall: recall(self, gold)?,
            sparsity: sparsity(self),
            edge_count: self.len(),
        })
    }

    /// Serializes to the text graph format: a header `n m causal edge_count`
    /// then one `i j` line per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.edges.len() * 8);
        let _ = writeln!(
            s,
            "{} {} {} {}",
            self.n,
            self.m,
            u8::from(self.causal),
            self.edges.len()
        );
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                1,
                format!("header needs `n m causal edge_count`, got {header:?}"),
            ));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(path, 1, format!("bad {what} {s:?}")))
        };
        let n = num(fields[0], "n")?;
        let m = num(fields[1], "m")?;
        let causal = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("causal flag must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let count = num(fields[3], "edge_count")?;
        let mut edges = Vec::with_capacity(count);
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || -> Result<u32> {
                it.next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(path, lineno + 1, format!("bad edge {line:?}")))
            };
            let i = next()?;
            let j = next()?;
            if it.next().is_some() {
                return Err(Error::parse(path, lineno + 1, format!("bad edge {line:?}")));
            }
            edges.push((i, j));
        }
        if edges.len() != count {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("header declares {count} edges, found {}", edges.len()),
            ));
        }
        Self::from_edges(n, m, causal, edges).map_err(|e| Error::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }
}

pub(crate) fn admissible_pairs(n: usize, m: usize, causal: bool) -> usize {
    if causal {
        n * (n + 1) / 2
    } else {
        n * m
    }
}

fn check_shape(n: usize, m: usize, causal: bool) -> Result<()> {
    if causal && n != m {
        return Err(Error::domain(format!(
            "causal graph needs n = m, got {n}x{m}"
        )));
    }
    if n > u32::MAX as usize || m > u32::MAX as usize {
        return Err(Error::domain("graph dimensions exceed u32 range"));
    }
    Ok(())
}

fn check_same_shape(a: &AttentionGraph, b: &AttentionGraph) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "graph shapes differ: {}x{} (causal={}) vs {}x{} (causal={})",
            a.n, a.m, a.causal, b.n, b.m, b.causal
        )))
    }
}

/// Ground-truth attention graph: edge (i, j) iff row i of entmax attention gives key j
/// nonzero probability.
pub fn extract_graph(sm: &ScoreMatrix, params: &EntmaxParams) -> Result<AttentionGraph> {
    let mut edges = Vec::new();
    for i in 0..sm.n() {
        let p = entmax(&sm.row_scores(i), params)?;
        edges.extend(p.support().into_iter().map(|j| (i as u32, j as u32)));
    }
    AttentionGraph::from_edges(sm.n(), sm.m(), sm.causal(), edges)
}

/// Entmax attention probabilities for every row, dense `n × m` (zeros above the
/// diagonal for causal heads).
pub fn attention_probs(sm: &ScoreMatrix, params: &EntmaxParams) -> Result<Matrix> {
    let mut out = Matrix::zeros(sm.n(), sm.m());
    for i in 0..sm.n() {
        let p = entmax(&sm.row_scores(i), params)?;
        out.row_mut(i)[..p.len()].copy_from_slice(p.as_slice());
    }
    Ok(out)
}

/// Recomputes attention with scores restricted to the edges of `mask`. Rows
/// with no edge are left at zero.
pub fn masked_attention_probs(
    sm: &ScoreMatrix,
    mask: &AttentionGraph,
    params: &EntmaxParams,
) -> Result<Matrix> {
    if mask.n() != sm.n() || mask.m() != sm.m() || mask.causal() != sm.causal() {
        return Err(Error::domain("mask graph does not match the score matrix"));
    }
    let mut out = Matrix::zeros(sm.n(), sm.m());
    for i in 0..sm.n() {
        let scores = sm.row_scores(i);
        let row_mask = &mask.row_mask(i)[..scores.len()];
        if !row_mask.iter().any(|&b| b) {
            continue;
        }
        let p = masked_entmax(&scores, row_mask, params)?;
        out.row_mut(i)[..p.len()].copy_from_slice(p.as_slice());
    }
    Ok(out)
}

/// `|pred ∩ gold| / |gold|`.
pub fn recall(pred: &AttentionGraph, gold: &AttentionGraph) -> Result<f64> {
    check_same_shape(pred, gold)?;
    if gold.is_empty() {
        return Err(Error::domain("recall against an empty gold graph"));
    }
    Ok(pred.intersection_len(gold) as f64 / gold.len() as f64)
}

/// `1 − |edges| / admissible pairs`.
pub fn sparsity(g: &AttentionGraph) -> f64 {
    let total = g.admissible_pairs();
    if total == 0 {
        return 1.0;
    }
    1.0 - g.len() as f64 / total as f64
}

pub fn graph_union(a: &AttentionGraph, b: &AttentionGraph) -> Result<AttentionGraph> {
    check_same_shape(a, b)?;
    let mut edges = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.edges.len() && y < b.edges.len() {
        match a.edges[x].cmp(&b.edges[y]) {
            std::cmp::Ordering::Less => {
                edges.push(a.edges[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                edges.push(b.edges[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                edges.push(a.edges[x]);
                x += 1;
                y += 1;
            }
        }
    }
    edges.extend_from_slice(&a.edges[x..]);
    edges.extend_from_slice(&b.edges[y..]);
    Ok(AttentionGraph {
        n: a.n,
        m: a.m,
        causal: a.causal,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, m: usize, causal: bool, e: &[(u32, u32)]) -> AttentionGraph {
        AttentionGraph::from_edges(n, m, causal, e.to_vec()).unwrap()
    }

    #[test]
    fn scores_of_orthonormal_rows() {
        let eye = Matrix::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let sm = ScoreMatrix::new(eye.clone(), eye, false).unwrap();
        let s = attention_scores(&sm);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert_eq!(s.values.get(i, j), want);
            }
        }
        let one = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let sm = ScoreMatrix::new(one.clone(), one, false).unwrap();
        assert!((attention_scores(&sm).values.get(0, 0) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn score_matrix_validation() {
        let a = Matrix::zeros(3, 4);
        let b = Matrix::zeros(3, 5);
        assert!(ScoreMatrix::new(a.clone(), b, false).is_err());
        assert!(ScoreMatrix::new(a, Matrix::zeros(2, 4), true).is_err());
    }

    #[test]
    fn causal_scores_are_masked() {
        let q = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let sm = ScoreMatrix::new(q.clone(), q, true).unwrap();
        let s = attention_scores(&sm);
        assert!(s.is_masked(0, 1));
        assert_eq!(s.values.get(0, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn recall_examples() {
        let gold = g(4, 4, false, &[(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(recall(&gold, &gold).unwrap(), 1.0);
        assert_eq!(recall(&g(4, 4, false, &[]), &gold).unwrap(), 0.0);
        let mut e = vec![(0, 0), (1, 1), (2, 2)];
        e.extend([
            (0, 1),
            (0, 2),
            (0, 3),
            (1, 0),
            (1, 2),
            (1, 3),
            (2, 0),
            (2, 1),
            (2, 3),
            (3, 0),
        ]);
        assert_eq!(recall(&g(4, 4, false, &e), &gold).unwrap(), 0.75);
        assert!(recall(&gold, &g(4, 4, false, &[])).is_err());
        assert!(recall(&g(4, 5, false, &[]), &gold).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(
            sparsity(&AttentionGraph::complete(3, 5, false).unwrap()),
            0.0
        );
        assert_eq!(sparsity(&g(3, 5, false, &[])), 1.0);
        let c = AttentionGraph::complete(4, 4, true).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(sparsity(&c), 0.0);
    }

    #[test]
    fn union_examples() {
        let a = g(3, 3, false, &[(0, 0), (1, 2), (2, 1)]);
        let b = g(3, 3, false, &[(0, 1), (0, 2), (1, 0), (2, 2)]);
        let e = g(3, 3, false, &[]);
        assert_eq!(graph_union(&a, &e).unwrap(), a);
        assert_eq!(graph_union(&a, &a).unwrap(), a);
        assert_eq!(graph_union(&a, &b).unwrap().len(), 7);
        assert!(graph_union(&a, &g(3, 3, true, &[])).is_err());
    }

    #[test]
    fn rejects_acausal_edges() {
        assert!(AttentionGraph::from_edges(3, 3, true, vec![(0, 1)]).is_err());
        assert!(AttentionGraph::from_edges(3, 3, false, vec![(0, 3)]).is_err());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let a = g(3, 4, false, &[(2, 3), (0, 1), (0, 1)]);
        let text = a.to_text();
        assert_eq!(text, "3 4 0 2\n0 1\n2 3\n");
        let p = Path::new("x.graph");
        assert_eq!(AttentionGraph::parse_text(&text, p).unwrap(), a);
        assert!(AttentionGraph::parse_text("3 4 0 3\n0 1\n2 3\n", p).is_err());
        assert!(AttentionGraph::parse_text("3 4 2 0\n", p).is_err());
        assert!(AttentionGraph::parse_text("3 3 1 1\n0 2\n", p).is_err());
        assert!(AttentionGraph::parse_text("", p).is_err());
    }

    #[test]
    fn sparsemax_one_edge_per_row() {
        let q = Matrix::from_rows(&[[4.0, 0.0], [0.0, 4.0]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]).unwrap();
        let sm = ScoreMatrix::new(q, k, false).unwrap();
        let gold = extract_graph(&sm, &EntmaxParams::with_alpha(2.0)).unwrap();
        assert_eq!(gold.edges(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn near_softmax_is_complete() {
        let q = Matrix::from_rows(&[[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]]).unwrap();
        let sm = ScoreMatrix::new(q.clone(), q, true).unwrap();
        let gold = extract_graph(&sm, &EntmaxParams::with_alpha(1.001)).unwrap();
        assert_eq!(gold, AttentionGraph::complete(3, 3, true).unwrap());
    }
}
