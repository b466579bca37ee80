//! Lloyd's k-means with k-means++ seeding and restarts.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Matrix};
use crate::textio::{fmt_f64, parse_f64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    /// Independent k-means++ restarts; the lowest-inertia run is kept.
    pub n_init: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

/// B cluster centers in the projected space.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(Matrix);

impl Centroids {
    pub fn new(c: Matrix) -> Result<Self> {
        if c.rows() == 0 {
            return Err(Error::domain("need at least one centroid"));
        }
        if !c.is_finite() {
            return Err(Error::domain("centroids must be finite"));
        }
        Ok(Self(c))
    }

    pub fn count(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, b: usize) -> &[f64] {
        self.0.row(b)
    }

    /// Index of the closest centroid, lower index on ties.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (b, c) in self.0.iter_rows().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (b, d);
            }
        }
        best
    }

    /// Text format: header `B r`, then B rows of r values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.count(), self.dim());
        for row in self.0.iter_rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
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
        let [b, r] = dims[..] else {
            return Err(Error::parse(path, 1, "header needs `B r`"));
        };
        let mut c = Matrix::zeros(b, r);
        for row in 0..b {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, row + 2, "missing centroid row"))?;
            let vals = line
                .split_whitespace()
                .map(|t| parse_f64(t, path, lineno + 1))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != r {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {r} values, found {}", vals.len()),
                ));
            }
            c.row_mut(row).copy_from_slice(&vals);
        }
        Self::new(c).map_err(|e| Error::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Centroids,
    pub inertia: f64,
    pub iterations: usize,
}

/// Fits `clusters` centroids to the rows of `x`.
pub fn kmeans_fit(x: &Matrix, clusters: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if clusters == 0 {
        return Err(Error::domain("k-means needs at least one cluster"));
    }
    if x.rows() < clusters {
        return Err(Error::domain(format!(
            "{} points cannot support {clusters} clusters",
            x.rows()
        )));
    }
    if !x.is_finite() {
        return Err(Error::domain("k-means input must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..cfg.n_init.max(1) {
        let seeds = plus_plus_init(x, clusters, &mut rng);
        let fit = lloyd(x, seeds, cfg.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init(x: &Matrix, clusters: usize, rng: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(clusters, x.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.iter_rows().map(|p| sq_dist(p, x.row(first))).collect();
    for c in 1..clusters {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen center
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (t, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(t), centers.row(c)));
        }
    }
    centers
}

fn lloyd(x: &Matrix, mut centers: Matrix, max_iter: usize) -> KMeansFit {
    let (n, k, dim) = (x.rows(), centers.rows(), x.cols());
    let mut assign = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let current = Centroids(centers.clone());
        let mut changed = false;
        for (t, a) in assign.iter_mut().enumerate() {
            let (b, _) = current.nearest(x.row(t));
            if *a != b {
                *a = b;
                changed = true;
            }
        }
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (t, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(x.row(t)) {
                *s += v;
            }
        }
        for (b, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (c, s) in centers.row_mut(b).iter_mut().zip(sums.row(b)) {
                    *c = s * inv;
                }
            }
        }
        // re-seed empty clusters at the point worst served by its center
        for b in 0..k {
            if counts[b] == 0 {
                let far = (0..n)
                    .max_by(|&s, &t| {
                        let ds = sq_dist(x.row(s), centers.row(assign[s]));
                        let dt = sq_dist(x.row(t), centers.row(assign[t]));
                        ds.total_cmp(&dt).then(t.cmp(&s))
                    })
                    .expect("nonempty input");
                let p = x.row(far).to_vec();
                centers.row_mut(b).copy_from_slice(&p);
                counts[b] = 1;
                counts[assign[far]] -= 1;
                assign[far] = b;
            }
        }
    }
    let inertia = (0..n)
        .map(|t| sq_dist(x.row(t), centers.row(assign[t])))
        .sum();
    KMeansFit {
        centroids: Centroids(centers),
        inertia,
        iterations,
    }
}
