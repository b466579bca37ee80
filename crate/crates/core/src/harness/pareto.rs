//! Non-dominated (sparsity, recall) points; both coordinates are maximized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub sparsity: f64,
    pub recall: f64,
    /// Position of the point in the input slice.
    pub index: usize,
}

/// Points not dominated by any other input point, sorted by sparsity ascending.
///
/// `p` dominates `q` iff `p` is at least as good in both coordinates and
/// strictly better in one. Duplicated points do not dominate each other and
/// are all kept.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::domain("Pareto frontier of an empty set"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pb.0.total_cmp(&pa.0)
            .then(pb.1.total_cmp(&pa.1))
            .then(a.cmp(&b))
    });

    let mut front = Vec::new();
    // best recall among points with strictly larger sparsity than the current group
    let mut best_before = f64::NEG_INFINITY;
    let mut g = 0;
    while g < order.len() {
        let s = points[order[g]].0;
        let mut end = g;
        while end < order.len() && points[order[end]].0 == s {
            end += 1;
        }
        let group_max = points[order[g]].1;
        for &idx in &order[g..end] {
            let r = points[idx].1;
            if r == group_max && r > best_before {
                front.push(ParetoPoint {
                    sparsity: s,
                    recall: r,
                    index: idx,
                });
            }
        }
        best_before = best_before.max(group_max);
        g = end;
    }
    front.sort_by(|a, b| {
        a.sparsity
            .total_cmp(&b.sparsity)
            .then(b.recall.total_cmp(&a.recall))
            .then(a.index.cmp(&b.index))
    });
    Ok(front)
}
