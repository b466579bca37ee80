//! Randomized audit of sparse consistency: entmax restricted to any mask
//! that covers its support equals entmax on the full row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::entmax::{entmax, masked_entmax, EntmaxParams, CONSISTENCY_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub trials: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Standard deviation of the random scores.
    pub score_std: f64,
    /// Probability that a position outside the support is also kept.
    pub extra_keep: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            min_len: 2,
            max_len: 64,
            score_std: std::f64::consts::SQRT_2,
            extra_keep: 0.5,
            alpha: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub trials: usize,
    pub failures: usize,
    pub max_abs_diff: f64,
}

pub fn audit_sparse_consistency(cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if !(0.0..=1.0).contains(&cfg.extra_keep) {
        return Err(Error::Config("extra_keep must lie in [0, 1]".into()));
    }
    let normal =
        Normal::new(0.0, cfg.score_std).map_err(|e| Error::Config(format!("score std: {e}")))?;
    let params = EntmaxParams::with_alpha(cfg.alpha);
    params
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = AuditReport {
        trials: cfg.trials,
        failures: 0,
        max_abs_diff: 0.0,
    };
    for _ in 0..cfg.trials {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let z: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let full = entmax(&z, &params)?;
        let mut mask = full.support_mask();
        for m in mask.iter_mut().filter(|m| !**m) {
            *m = rng.random_bool(cfg.extra_keep);
        }
        let masked = masked_entmax(&z, &mask, &params)?;
        let diff = full
            .as_slice()
            .iter()
            .zip(masked.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.max_abs_diff = report.max_abs_diff.max(diff);
        report.failures += usize::from(diff > CONSISTENCY_TOL);
    }
    Ok(report)
}
