//! Angular LSH baseline in the style of Reformer: per hashing round, project
//! onto `num_buckets / 2` random Gaussian directions and take the argmax over
//! `[xR, −xR]`. Queries and keys must be hashed with the same hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BucketAssignment;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LshHasher {
    num_buckets: usize,
    /// One `(num_buckets / 2) × dim` matrix of directions per round.
    rounds: Vec<Matrix>,
}

impl LshHasher {
    pub fn new(dim: usize, rounds: usize, num_buckets: usize, seed: u64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::domain("LSH needs at least one hashing round"));
        }
        if num_buckets == 0 || (num_buckets > 1 && num_buckets % 2 == 1) {
            return Err(Error::domain(format!(
                "bucket count must be 1 or even, got {num_buckets}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = num_buckets / 2;
        let rounds = (0..rounds)
            .map(|_| {
                let mut r = Matrix::zeros(half, dim);
                for v in r.as_mut_slice() {
                    *v = StandardNormal.sample(&mut rng);
                }
                r
            })
            .collect();
        Ok(Self {
            num_buckets,
            rounds,
        })
    }

    pub fn universe(&self) -> usize {
        self.rounds.len() * self.num_buckets
    }

    /// One bucket id per round, offset by `round * num_buckets`.
    pub fn hash(&self, x: &[f64]) -> Vec<u32> {
        self.rounds
            .iter()
            .enumerate()
            .map(|(round, dirs)| {
                let local = if self.num_buckets == 1 {
                    0
                } else {
                    let half = dirs.rows();
                    let mut best = (0, f64::NEG_INFINITY);
                    for (h, dir) in dirs.iter_rows().enumerate() {
                        let y = dot(dir, x);
                        if y > best.1 {
                            best = (h, y);
                        }
                        if -y > best.1 {
                            best = (h + half, -y);
                        }
                    }
                    best.0
                };
                (round * self.num_buckets + local) as u32
            })
            .collect()
    }

    pub fn assign(&self, x: &Matrix) -> Result<BucketAssignment> {
        if let Some(dirs) = self.rounds.first() {
            if dirs.rows() > 0 && dirs.cols() != x.cols() {
                return Err(Error::domain(format!(
                    "hasher built for dimension {}, data has {}",
                    dirs.cols(),
                    x.cols()
                )));
            }
        }
        BucketAssignment::new(
            self.universe(),
            x.iter_rows().map(|r| self.hash(r)).collect(),
        )
    }
}

/// Hashes the rows of `x` with a fresh hasher seeded by `seed`.
pub fn lsh_assign(
    x: &Matrix,
    rounds: usize,
    num_buckets: usize,
    seed: u64,
) -> Result<BucketAssignment> {
    LshHasher::new(x.cols(), rounds, num_buckets, seed)?.assign(x)
}
