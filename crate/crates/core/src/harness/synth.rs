use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ScoreMatrix;
use crate::linalg::Matrix;
use crate::seed::derive_seed;

/// One (layer, head, input) triple of query/key matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInstance {
    pub layer: usize,
    pub head: usize,
    pub instance: usize,
    pub sm: ScoreMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Tokens drawn around `clusters` latent centers shared by queries and
    /// keys of a head. Centers have norm `center_norm` (mutually orthogonal
    /// when `clusters <= d`); tokens add isotropic noise of std `spread`.
    GaussianMixture {
        clusters: usize,
        #[serde(default = "default_center_norm")]
        center_norm: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// `Q = A·B`, `K = A′·B` with a per-head basis `B` of the given rank.
    LowRank {
        rank: usize,
        #[serde(default = "default_center_norm")]
        scale: f64,
    },
    /// Matrices read from a tensor manifest.
    Loaded { manifest: PathBuf },
}

fn default_center_norm() -> f64 {
    4.0
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub generator: Generator,
    #[serde(default = "one")]
    pub num_layers: usize,
    #[serde(default = "one")]
    pub num_heads: usize,
    pub num_instances: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub causal: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_alpha() -> f64 {
    1.5
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::Config("n, m and d must be positive".into()));
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.num_instances == 0 {
            return Err(Error::Config(
                "layer, head and instance counts must be positive".into(),
            ));
        }
        if self.causal && self.n != self.m {
            return Err(Error::Config("causal instances need n = m".into()));
        }
        match self.generator {
            Generator::GaussianMixture { clusters: 0, .. } => Err(Error::Config(
                "gaussian mixture needs at least one cluster".into(),
            )),
            Generator::LowRank { rank: 0, .. } => {
                Err(Error::Config("low-rank generator needs rank >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(len: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| std * gauss(rng)).collect()
}

/// `count` vectors of norm `norm`; orthogonalized when `count <= d`.
fn centers(count: usize, d: usize, norm: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = normal_vec(d, 1.0, rng);
        if out.len() < d {
            for u in &out {
                let proj: f64 = crate::linalg::dot(&v, u) / (norm * norm);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let len = crate::linalg::dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a *= norm / len);
        out.push(v);
    }
    out
}

fn mixture_tokens(rows: usize, centers: &[Vec<f64>], spread: f64, rng: &mut impl Rng) -> Matrix {
    let d = centers[0].len();
    let mut x = Matrix::zeros(rows, d);
    for t in 0..rows {
        let c = &centers[rng.random_range(0..centers.len())];
        for (v, cv) in x.row_mut(t).iter_mut().zip(c) {
            *v = cv + spread * gauss(rng);
        }
    }
    x
}

fn low_rank(rows: usize, basis: &Matrix, rng: &mut impl Rng) -> Matrix {
    let (rank, d) = (basis.rows(), basis.cols());
    let mut x = Matrix::zeros(rows, d);
    for t in 0..rows {
        let a = normal_vec(rank, 1.0, rng);
        let row = x.row_mut(t);
        for (k, ak) in a.iter().enumerate() {
            for (v, b) in row.iter_mut().zip(basis.row(k)) {
                *v += ak * b;
            }
        }
    }
    x
}

/// Deterministic synthetic heads, ordered by (layer, head, instance).
pub fn generate_instances(spec: &SyntheticSpec) -> Result<Vec<HeadInstance>> {
    if let Generator::Loaded { manifest } = &spec.generator {
        return super::load_qk(manifest);
    }
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.num_layers * spec.num_heads * spec.num_instances);
    for layer in 0..spec.num_layers {
        for head in 0..spec.num_heads {
            let head_seed = derive_seed(spec.seed, &[layer as u64, head as u64]);
            let mut head_rng = ChaCha8Rng::seed_from_u64(head_seed);
            enum Shared {
                Centers(Vec<Vec<f64>>, f64),
                Basis(Matrix),
            }
            let shared = match &spec.generator {
                Generator::GaussianMixture {
                    clusters,
                    center_norm,
                    spread,
                } => Shared::Centers(
                    centers(*clusters, spec.d, *center_norm, &mut head_rng),
                    *spread,
                ),
                Generator::LowRank { rank, scale } => {
                    let std = scale / (*rank as f64).sqrt();
                    let data = normal_vec(rank * spec.d, std, &mut head_rng);
                    Shared::Basis(Matrix::from_vec(*rank, spec.d, data)?)
                }
                Generator::Loaded { .. } => unreachable!(),
            };
            for instance in 0..spec.num_instances {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(head_seed, &[instance as u64]));
                let (q, k) = match &shared {
                    Shared::Centers(c, spread) => (
                        mixture_tokens(spec.n, c, *spread, &mut rng),
                        mixture_tokens(spec.m, c, *spread, &mut rng),
                    ),
                    Shared::Basis(b) => {
                        (low_rank(spec.n, b, &mut rng), low_rank(spec.m, b, &mut rng))
                    }
                };
                out.push(HeadInstance {
                    layer,
                    head,
                    instance,
                    sm: ScoreMatrix::new(q, k, spec.causal)?,
                });
            }
        }
    }
    Ok(out)
}
