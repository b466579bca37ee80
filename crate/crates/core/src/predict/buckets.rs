use crate::error::{Error, Result};
use crate::graph::AttentionGraph;

/// Bucket ids for every token on one side (queries or keys).
///
/// Ids are 0-based and lie in `0..universe`. Each token's set is sorted and
/// deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketAssignment {
    universe: usize,
    buckets: Vec<Vec<u32>>,
}

impl BucketAssignment {
    pub fn new(universe: usize, mut buckets: Vec<Vec<u32>>) -> Result<Self> {
        for (t, set) in buckets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&b) = set.last() {
                if b as usize >= universe {
                    return Err(Error::domain(format!(
                        "token {t} has bucket {b} outside a universe of {universe}"
                    )));
                }
            }
        }
        Ok(Self { universe, buckets })
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn token(&self, t: usize) -> &[u32] {
        &self.buckets[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.buckets.iter().map(|b| b.as_slice())
    }

    /// Tokens with no bucket at all (only the routing baseline produces these).
    pub fn unassigned(&self) -> usize {
        self.buckets.iter().filter(|b| b.is_empty()).count()
    }

    /// Number of tokens in each bucket.
    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.universe];
        for set in &self.buckets {
            for &b in set {
                sizes[b as usize] += 1;
            }
        }
        sizes
    }

    /// Tokens per bucket, ascending within each bucket.
    fn inverted(&self) -> Vec<Vec<u32>> {
        let mut inv = vec![Vec::new(); self.universe];
        for (t, set) in self.buckets.iter().enumerate() {
            for &b in set {
                inv[b as usize].push(t as u32);
            }
        }
        inv
    }
}

/// Edge (i, j) iff query i and key j share a bucket.
pub fn buckets_to_graph(
    qa: &BucketAssignment,
    ka: &BucketAssignment,
    causal: bool,
) -> Result<AttentionGraph> {
    if qa.universe != ka.universe {
        return Err(Error::domain(format!(
            "query buckets range over {} ids but key buckets over {}",
            qa.universe, ka.universe
        )));
    }
    let keys_in = ka.inverted();
    AttentionGraph::from_row_masks(qa.len(), ka.len(), causal, |i, row| {
        for &b in qa.token(i) {
            for &j in &keys_in[b as usize] {
                row[j as usize] = true;
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assign(universe: usize, sets: &[&[u32]]) -> BucketAssignment {
        BucketAssignment::new(universe, sets.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    #[test]
    fn disjoint_buckets_give_empty_graph() {
        let q = assign(4, &[&[0], &[1]]);
        let k = assign(4, &[&[2], &[3], &[2, 3]]);
        assert!(buckets_to_graph(&q, &k, false).unwrap().is_empty());
    }

    #[test]
    fn shared_bucket_gives_complete_graph() {
        let q = assign(2, &[&[0], &[0, 1], &[0]]);
        let g = buckets_to_graph(&q, &q, true).unwrap();
        assert_eq!(g, AttentionGraph::complete(3, 3, true).unwrap());
    }

    #[test]
    fn hand_built_matches_pairwise_intersection() {
        let q = assign(5, &[&[0, 3], &[1], &[2, 4], &[]]);
        let k = assign(5, &[&[3], &[1, 2], &[4], &[0, 1]]);
        let g = buckets_to_graph(&q, &k, false).unwrap();
        let mut expected = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if q.token(i).iter().any(|b| k.token(j).contains(b)) {
                    expected.push((i as u32, j as u32));
                }
            }
        }
        assert_eq!(g.edges(), expected.as_slice());
    }

    #[test]
    fn rejects_mismatched_universes() {
        let q = assign(2, &[&[0]]);
        let k = assign(3, &[&[0]]);
        assert!(buckets_to_graph(&q, &k, false).is_err());
        assert!(BucketAssignment::new(2, vec![vec![2]]).is_err());
    }
}
