//! Balanced per-dimension binning of projected queries and keys.
//!
//! Each of the r projected dimensions is cut into β bins holding exactly
//! ⌈N/β⌉ pooled values each; the pool is padded with +∞ sentinels so the
//! last bins absorb the remainder. A token lands in one bin per dimension,
//! giving r bucket ids out of a universe of r·β.

use std::fmt::Write as _;
use std::path::Path;

use super::BucketAssignment;
use crate::error::{Error, Result};
use crate::linalg::{argsort_by, Matrix};
use crate::textio::{fmt_f64, parse_f64};

fn check_beta(n: usize, beta: usize) -> Result<()> {
    if beta == 0 {
        return Err(Error::domain("number of bins must be at least 1"));
    }
    if beta > n {
        return Err(Error::domain(format!(
            "{beta} bins requested for only {n} values"
        )));
    }
    Ok(())
}

/// Rank-based balanced assignment of the rows of `x` (queries and keys pooled).
pub fn quantize_assign(x: &Matrix, beta: usize) -> Result<BucketAssignment> {
    let n = x.rows();
    check_beta(n, beta)?;
    let per_bin = n.div_ceil(beta);
    let mut buckets = vec![Vec::with_capacity(x.cols()); n];
    for dim in 0..x.cols() {
        let order = argsort_by(n, |t| x.get(t, dim));
        // padding sentinels sort after every real value, so real ranks are unchanged
        for (rank, &t) in order.iter().enumerate() {
            let bin = rank / per_bin;
            buckets[t].push((dim * beta + bin) as u32);
        }
    }
    BucketAssignment::new(x.cols() * beta, buckets)
}

/// Bins projected queries and keys jointly; returns (query, key) assignments.
pub fn quantize_pair(
    q: &Matrix,
    k: &Matrix,
    beta: usize,
) -> Result<(BucketAssignment, BucketAssignment)> {
    let pooled = q.vstack(k)?;
    let all = quantize_assign(&pooled, beta)?;
    let universe = all.universe();
    let mut sets: Vec<Vec<u32>> = all.iter().map(|s| s.to_vec()).collect();
    let keys = sets.split_off(q.rows());
    Ok((
        BucketAssignment::new(universe, sets)?,
        BucketAssignment::new(universe, keys)?,
    ))
}

/// Cut points of a balanced binning: `cuts[dim]` holds β − 1 ascending values;
/// a value v falls in bin `#{c ∈ cuts[dim] : c ≤ v}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinBoundaries {
    pub beta: usize,
    pub cuts: Vec<Vec<f64>>,
}

impl BinBoundaries {
    pub fn dims(&self) -> usize {
        self.cuts.len()
    }

    /// Text format: `r beta`, then r lines of β − 1 cut values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.dims(), self.beta);
        for row in &self.cuts {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, format!("bad header {header:?}")))?;
        let [r, beta] = dims[..] else {
            return Err(Error::parse(path, 1, "header needs `r beta`"));
        };
        if beta == 0 {
            return Err(Error::parse(path, 1, "beta must be positive"));
        }
        let mut cuts = Vec::with_capacity(r);
        for dim in 0..r {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, dim + 2, "missing cut row"))?;
            let row = line
                .split_whitespace()
                .map(|t| parse_f64(t, path, lineno + 1))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != beta - 1 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {} cuts, found {}", beta - 1, row.len()),
                ));
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::parse(path, lineno + 1, "cuts are not ascending"));
            }
            cuts.push(row);
        }
        Ok(Self { beta, cuts })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }
}

/// Cut points of the balanced binning of the rows of `x`. Bins made only of
/// padding get a `+inf` cut.
pub fn fit_bins(x: &Matrix, beta: usize) -> Result<BinBoundaries> {
    let n = x.rows();
    check_beta(n, beta)?;
    let per_bin = n.div_ceil(beta);
    let cuts = (0..x.cols())
        .map(|dim| {
            let mut vals: Vec<f64> = (0..n).map(|t| x.get(t, dim)).collect();
            vals.sort_by(f64::total_cmp);
            (1..beta)
                .map(|b| vals.get(b * per_bin).copied().unwrap_or(f64::INFINITY))
                .collect()
        })
        .collect();
    Ok(BinBoundaries { beta, cuts })
}

/// Assigns rows of `x` to bins using precomputed cut points.
pub fn assign_with_bins(x: &Matrix, bins: &BinBoundaries) -> Result<BucketAssignment> {
    if x.cols() != bins.dims() {
        return Err(Error::domain(format!(
            "bins cover {} dimensions, data has {}",
            bins.dims(),
            x.cols()
        )));
    }
    let buckets = x
        .iter_rows()
        .map(|row| {
            row.iter()
                .zip(&bins.cuts)
                .enumerate()
                .map(|(dim, (&v, cuts))| {
                    let bin = cuts.partition_point(|&c| c <= v);
                    (dim * bins.beta + bin) as u32
                })
                .collect()
        })
        .collect();
    BucketAssignment::new(x.cols() * bins.beta, buckets)
}
