use super::{BucketAssignment, Centroids};
use crate::error::{Error, Result};
use crate::linalg::{argsort_by, sq_dist, Matrix};

/// The `k` centroids closest to `x` (lower index wins ties), as sorted bucket ids.
pub fn cluster_assign_topk(x: &[f64], centroids: &Centroids, k: usize) -> Result<Vec<u32>> {
    let b = centroids.count();
    if k == 0 || k > b {
        return Err(Error::domain(format!("top-k must be in 1..={b}, got {k}")));
    }
    if x.len() != centroids.dim() {
        return Err(Error::domain(format!(
            "point has dimension {}, centroids {}",
            x.len(),
            centroids.dim()
        )));
    }
    let dists: Vec<f64> = (0..b).map(|c| sq_dist(x, centroids.get(c))).collect();
    let mut chosen: Vec<u32> = argsort_by(b, |c| dists[c])
        .into_iter()
        .take(k)
        .map(|c| c as u32)
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Top-k closest centroids for every row of `x`; no token is left without a bucket.
pub fn cluster_assign(x: &Matrix, centroids: &Centroids, k: usize) -> Result<BucketAssignment> {
    let sets = x
        .iter_rows()
        .map(|row| cluster_assign_topk(row, centroids, k))
        .collect::<Result<Vec<_>>>()?;
    BucketAssignment::new(centroids.count(), sets)
}

/// Routing-style assignment: every centroid claims its `topk_points` closest
/// rows of `x`. Tokens no centroid claims end up with an empty bucket set.
pub fn routing_assign(
    x: &Matrix,
    centroids: &Centroids,
    topk_points: usize,
) -> Result<BucketAssignment> {
    if topk_points > x.rows() {
        return Err(Error::domain(format!(
            "top-k of {topk_points} points requested from {} tokens",
            x.rows()
        )));
    }
    if x.cols() != centroids.dim() {
        return Err(Error::domain("token and centroid dimensions differ"));
    }
    let mut sets = vec![Vec::new(); x.rows()];
    for b in 0..centroids.count() {
        let c = centroids.get(b);
        for t in argsort_by(x.rows(), |t| sq_dist(x.row(t), c))
            .into_iter()
            .take(topk_points)
        {
            sets[t].push(b as u32);
        }
    }
    BucketAssignment::new(centroids.count(), sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cents(rows: &[[f64; 2]]) -> Centroids {
        Centroids::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn topk_examples() {
        let c = cents(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 3.0]]);
        assert_eq!(
            cluster_assign_topk(&[0.5, 0.0], &c, 4).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(cluster_assign_topk(&[2.0, 0.0], &c, 1).unwrap(), vec![2]);
        // equidistant from 0 and 1: lower index wins
        assert_eq!(cluster_assign_topk(&[0.5, 0.0], &c, 1).unwrap(), vec![0]);
        assert!(cluster_assign_topk(&[0.0, 0.0], &c, 5).is_err());
        assert!(cluster_assign_topk(&[0.0, 0.0], &c, 0).is_err());
    }

    #[test]
    fn routing_leaves_far_token_unassigned() {
        let x = Matrix::from_rows(&[[0.0, 0.1], [0.1, 0.0], [-0.1, 0.0], [9.0, 9.0]]).unwrap();
        let c = cents(&[[0.0, 0.0]]);
        let a = routing_assign(&x, &c, 3).unwrap();
        assert!(a.token(3).is_empty());
        assert_eq!(a.unassigned(), 1);
        let all = routing_assign(&x, &c, 4).unwrap();
        assert_eq!(all.unassigned(), 0);
        assert!(routing_assign(&x, &c, 5).is_err());
    }
}
