use crate::error::{Error, Result};
use crate::graph::AttentionGraph;
use crate::linalg::{sq_dist, Matrix};

/// Connects every projected query/key pair at Euclidean distance ≤ `t`.
pub fn distance_pairing(q: &Matrix, k: &Matrix, t: f64, causal: bool) -> Result<AttentionGraph> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!(
            "distance threshold must be >= 0, got {t}"
        )));
    }
    if q.cols() != k.cols() {
        return Err(Error::domain("projected query and key dimensions differ"));
    }
    let t2 = t * t;
    AttentionGraph::from_row_masks(q.rows(), k.rows(), causal, |i, row| {
        let qi = q.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = sq_dist(qi, k.row(j)) <= t2;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| [x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn points_on_a_line() {
        let p = line(&[0.0, 1.0, 2.0]);
        let g = distance_pairing(&p, &p, 1.0, false).unwrap();
        assert_eq!(g.len(), 7);
        assert!(!g.contains(0, 2) && !g.contains(2, 0));
    }

    #[test]
    fn zero_threshold_keeps_coincident_pairs_only() {
        let q = line(&[0.0, 0.5, 3.0]);
        let k = line(&[0.1, 0.5, 2.0]);
        let g = distance_pairing(&q, &k, 0.0, false).unwrap();
        assert_eq!(g.edges(), &[(1, 1)]);
    }

    #[test]
    fn infinite_threshold_is_complete() {
        let q = line(&[0.0, 10.0, -3.0]);
        let g = distance_pairing(&q, &q, f64::INFINITY, true).unwrap();
        assert_eq!(g, AttentionGraph::complete(3, 3, true).unwrap());
        assert!(distance_pairing(&q, &q, -1.0, true).is_err());
    }
}
