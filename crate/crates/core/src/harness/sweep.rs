//! Sweep orchestration: fit per-head artifacts on training instances, then
//! evaluate every (method, hyperparameter, window) cell on held-out instances.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HeadInstance, SyntheticSpec};
use crate::entmax::EntmaxParams;
use crate::error::{Error, Result};
use crate::graph::{extract_graph, recall, sparsity, AttentionGraph};
use crate::linalg::Matrix;
use crate::predict::{
    bigbird_random_blocks, buckets_to_graph, cluster_assign, combine_with_patterns,
    distance_pairing, kmeans_fit, quantize_pair, routing_assign, select_global_tokens, Centroids,
    GlobalSelection, KMeansConfig, LshHasher, PatternConfig,
};
use crate::projection::{train_projection, PairDataset, PairInstance, ProjectionHead, TrainConfig};
use crate::seed::{derive_seed, hash_str};

/// (layer, head)
pub type HeadKey = (usize, usize);

/// A predictor family and its hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MethodSpec {
    /// Pairs within projected distance `t`.
    Distance { thresholds: Vec<f64> },
    /// Balanced per-dimension bins, β bins per dimension.
    Quantization { betas: Vec<usize> },
    /// k-means buckets; each token joins its `top_k` closest centroids.
    Clustering {
        clusters: Vec<usize>,
        #[serde(default = "one_vec")]
        top_k: Vec<usize>,
    },
    /// Window (and configured global) pattern alone.
    Window,
    /// Random key blocks per query block.
    Bigbird {
        random_blocks: Vec<usize>,
        #[serde(default = "one")]
        block_size: usize,
    },
    /// Global tokens on top of the window.
    Longformer {
        global_tokens: Vec<usize>,
        #[serde(default = "random_selection")]
        selection: GlobalSelection,
    },
    /// Angular LSH on the raw query/key vectors.
    Reformer {
        buckets: Vec<usize>,
        #[serde(default = "one")]
        rounds: usize,
    },
    /// Each centroid takes its ⌈n/B⌉ closest tokens.
    Routing { clusters: Vec<usize> },
}

fn one() -> usize {
    1
}

fn one_vec() -> Vec<usize> {
    vec![1]
}

fn random_selection() -> GlobalSelection {
    GlobalSelection::Random
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Setting {
    Distance(f64),
    Quantization(usize),
    Clustering {
        clusters: usize,
        top_k: usize,
    },
    Window,
    Bigbird {
        blocks: usize,
        block_size: usize,
    },
    Longformer {
        globals: usize,
        selection: GlobalSelection,
    },
    Reformer {
        buckets: usize,
        rounds: usize,
    },
    Routing(usize),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Distance { .. } => "distance",
            MethodSpec::Quantization { .. } => "quantization",
            MethodSpec::Clustering { .. } => "clustering",
            MethodSpec::Window => "window",
            MethodSpec::Bigbird { .. } => "bigbird",
            MethodSpec::Longformer { .. } => "longformer",
            MethodSpec::Reformer { .. } => "reformer",
            MethodSpec::Routing { .. } => "routing",
        }
    }

    pub fn needs_projection(&self) -> bool {
        matches!(
            self,
            MethodSpec::Distance { .. }
                | MethodSpec::Quantization { .. }
                | MethodSpec::Clustering { .. }
                | MethodSpec::Routing { .. }
        )
    }

    /// Centroid counts this method needs fitted.
    pub fn cluster_counts(&self) -> Vec<usize> {
        match self {
            MethodSpec::Clustering { clusters, .. } | MethodSpec::Routing { clusters } => {
                clusters.clone()
            }
            _ => Vec::new(),
        }
    }

    fn settings(&self) -> Vec<(BTreeMap<String, f64>, Setting)> {
        let hp = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
            pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
        };
        match self {
            MethodSpec::Distance { thresholds } => thresholds
                .iter()
                .map(|&t| (hp(&[("t", t)]), Setting::Distance(t)))
                .collect(),
            MethodSpec::Quantization { betas } => betas
                .iter()
                .map(|&b| (hp(&[("beta", b as f64)]), Setting::Quantization(b)))
                .collect(),
            MethodSpec::Clustering { clusters, top_k } => clusters
                .iter()
                .flat_map(|&b| {
                    top_k.iter().filter(move |&&k| k <= b).map(move |&k| {
                        (
                            hp(&[("clusters", b as f64), ("top_k", k as f64)]),
                            Setting::Clustering {
                                clusters: b,
                                top_k: k,
                            },
                        )
                    })
                })
                .collect(),
            MethodSpec::Window => vec![(BTreeMap::new(), Setting::Window)],
            MethodSpec::Bigbird {
                random_blocks,
                block_size,
            } => random_blocks
                .iter()
                .map(|&r| {
                    (
                        hp(&[
                            ("random_blocks", r as f64),
                            ("block_size", *block_size as f64),
                        ]),
                        Setting::Bigbird {
                            blocks: r,
                            block_size: *block_size,
                        },
                    )
                })
                .collect(),
            MethodSpec::Longformer {
                global_tokens,
                selection,
            } => global_tokens
                .iter()
                .map(|&g| {
                    (
                        hp(&[("global_tokens", g as f64)]),
                        Setting::Longformer {
                            globals: g,
                            selection: *selection,
                        },
                    )
                })
                .collect(),
            MethodSpec::Reformer { buckets, rounds } => buckets
                .iter()
                .map(|&b| {
                    (
                        hp(&[("buckets", b as f64), ("rounds", *rounds as f64)]),
                        Setting::Reformer {
                            buckets: b,
                            rounds: *rounds,
                        },
                    )
                })
                .collect(),
            MethodSpec::Routing { clusters } => clusters
                .iter()
                .map(|&b| (hp(&[("clusters", b as f64)]), Setting::Routing(b)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionSettings {
    /// Projected dimension.
    pub r: usize,
    /// Instances with this many query tokens or fewer are not used for training.
    pub min_tokens: usize,
    pub train: TrainConfig,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            r: 4,
            min_tokens: 20,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
    /// Global token positions added to every method's pattern.
    #[serde(default)]
    pub global_tokens: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Share of each head's instances used to fit projections and centroids.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub projection: ProjectionSettings,
    #[serde(default)]
    pub kmeans: KMeansConfig,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Synthetic data to generate when no manifest is given.
    #[serde(default)]
    pub data: Option<SyntheticSpec>,
}

fn default_alpha() -> f64 {
    1.5
}

fn default_windows() -> Vec<usize> {
    vec![0]
}

fn default_train_fraction() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("sweep lists no methods".into()));
        }
        if !(self.train_fraction >= 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in [0, 1), got {}",
                self.train_fraction
            )));
        }
        EntmaxParams::with_alpha(self.alpha)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.projection.train.validate()?;
        if self.windows.is_empty() {
            return Err(Error::Config("window grid is empty".into()));
        }
        Ok(())
    }

    fn needs_projection(&self) -> bool {
        self.methods.iter().any(MethodSpec::needs_projection)
    }

    fn cluster_counts(&self) -> BTreeSet<usize> {
        self.methods
            .iter()
            .flat_map(|m| m.cluster_counts())
            .collect()
    }
}

/// One evaluation point, kept at (layer, head) granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: String,
    pub hyperparams: BTreeMap<String, f64>,
    pub layer: usize,
    pub head: usize,
    pub sparsity: f64,
    pub recall: f64,
    pub runtime_ms: Option<f64>,
}

impl SweepRecord {
    /// Canonical ordering used before writing records.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.method
            .cmp(&other.method)
            .then_with(|| {
                let a = self.hyperparams.iter();
                let b = other.hyperparams.iter();
                for ((ka, va), (kb, vb)) in a.zip(b) {
                    let o = ka.cmp(kb).then(va.total_cmp(vb));
                    if o.is_ne() {
                        return o;
                    }
                }
                self.hyperparams.len().cmp(&other.hyperparams.len())
            })
            .then(self.layer.cmp(&other.layer))
            .then(self.head.cmp(&other.head))
    }
}

/// A held-out instance with its ground-truth graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub inst: HeadInstance,
    pub gold: AttentionGraph,
}

impl EvalInstance {
    pub fn key(&self) -> HeadKey {
        (self.inst.layer, self.inst.head)
    }
}

/// Per-head fitted predictor state.
#[derive(Debug, Clone, Default)]
pub struct HeadArtifacts {
    pub projection: Option<ProjectionHead>,
    /// Fitted centroids keyed by cluster count.
    pub centroids: BTreeMap<usize, Centroids>,
}

pub fn extract_gold(
    instances: Vec<HeadInstance>,
    params: &EntmaxParams,
    parallel: bool,
) -> Result<Vec<EvalInstance>> {
    let one = |inst: HeadInstance| -> Result<EvalInstance> {
        let gold = extract_graph(&inst.sm, params)?;
        Ok(EvalInstance { inst, gold })
    };
    if parallel {
        instances.into_par_iter().map(one).collect()
    } else {
        instances.into_iter().map(one).collect()
    }
}

fn group_by_head(items: &[EvalInstance]) -> BTreeMap<HeadKey, Vec<&EvalInstance>> {
    let mut out: BTreeMap<HeadKey, Vec<&EvalInstance>> = BTreeMap::new();
    for it in items {
        out.entry(it.key()).or_default().push(it);
    }
    out
}

fn fit_head(
    key: HeadKey,
    train: &[&EvalInstance],
    cfg: &SweepConfig,
    clusters: &BTreeSet<usize>,
) -> Result<HeadArtifacts> {
    let mut art = HeadArtifacts::default();
    if !cfg.needs_projection() {
        return Ok(art);
    }
    let d = train
        .first()
        .map(|t| t.inst.sm.dim())
        .ok_or_else(|| Error::Config(format!("head {key:?} has no training instances")))?;
    let r = cfg.projection.r;
    if r == 0 || r >= d {
        return Err(Error::Config(format!(
            "projected dimension r = {r} must be in 1..{d}"
        )));
    }
    let pair_instances = train
        .iter()
        .map(|t| {
            PairInstance::new(
                t.inst.sm.queries().clone(),
                t.inst.sm.keys().clone(),
                t.gold.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let head_id = [key.0 as u64, key.1 as u64];
    let ds = PairDataset::new(
        pair_instances,
        cfg.projection.min_tokens,
        derive_seed(cfg.seed, &[hash_str("negatives"), head_id[0], head_id[1]]),
    )?;
    if ds.positives().is_empty() {
        return Err(Error::Config(format!(
            "head {key:?}: no training instance has more than {} tokens",
            cfg.projection.min_tokens
        )));
    }
    let mut train_cfg = cfg.projection.train.clone();
    train_cfg.rng_seed = derive_seed(
        cfg.seed,
        &[
            hash_str("projection"),
            head_id[0],
            head_id[1],
            train_cfg.rng_seed,
        ],
    );
    let (head, _) = train_projection(&ds, &train_cfg, d, r)?;

    if !clusters.is_empty() {
        let mut pooled: Option<Matrix> = None;
        for t in train {
            let q = head.project_rows(t.inst.sm.queries())?;
            let k = head.project_rows(t.inst.sm.keys())?;
            let both = q.vstack(&k)?;
            pooled = Some(match pooled {
                None => both,
                Some(p) => p.vstack(&both)?,
            });
        }
        let pooled = pooled.expect("nonempty training set");
        for &b in clusters {
            let mut km = cfg.kmeans.clone();
            km.seed = derive_seed(
                cfg.seed,
                &[
                    hash_str("kmeans"),
                    head_id[0],
                    head_id[1],
                    b as u64,
                    km.seed,
                ],
            );
            let fit = kmeans_fit(&pooled, b, &km).map_err(|e| {
                Error::Config(format!("head {key:?}: cannot fit {b} centroids: {e}"))
            })?;
            art.centroids.insert(b, fit.centroids);
        }
    }
    art.projection = Some(head);
    Ok(art)
}

/// Trains one projection per head and fits every centroid count the methods need.
pub fn fit_artifacts(
    train: &[EvalInstance],
    cfg: &SweepConfig,
) -> Result<BTreeMap<HeadKey, HeadArtifacts>> {
    let groups = group_by_head(train);
    let clusters = cfg.cluster_counts();
    let groups: Vec<(HeadKey, Vec<&EvalInstance>)> = groups.into_iter().collect();
    let fit = |(key, items): &(HeadKey, Vec<&EvalInstance>)| -> Result<(HeadKey, HeadArtifacts)> {
        Ok((*key, fit_head(*key, items, cfg, &clusters)?))
    };
    if cfg.parallel {
        groups.par_iter().map(fit).collect()
    } else {
        groups.iter().map(fit).collect()
    }
}

/// Projected (queries, keys) of each instance; `None` where the head has no projection.
pub fn prepare_projected(
    eval: &[EvalInstance],
    artifacts: &BTreeMap<HeadKey, HeadArtifacts>,
) -> Result<Vec<Option<(Matrix, Matrix)>>> {
    eval.iter()
        .map(
            |e| match artifacts.get(&e.key()).and_then(|a| a.projection.as_ref()) {
                Some(p) => Ok(Some((
                    p.project_rows(e.inst.sm.queries())?,
                    p.project_rows(e.inst.sm.keys())?,
                ))),
                None => Ok(None),
            },
        )
        .collect()
}

fn check_artifacts(
    heads: &BTreeSet<HeadKey>,
    cfg: &SweepConfig,
    artifacts: &BTreeMap<HeadKey, HeadArtifacts>,
) -> Result<()> {
    for key in heads {
        for method in &cfg.methods {
            if !method.needs_projection() {
                continue;
            }
            let art = artifacts.get(key);
            if art.and_then(|a| a.projection.as_ref()).is_none() {
                return Err(Error::Config(format!(
                    "method {} needs a projection for layer {} head {}",
                    method.name(),
                    key.0,
                    key.1
                )));
            }
            for b in method.cluster_counts() {
                if !art.is_some_and(|a| a.centroids.contains_key(&b)) {
                    return Err(Error::Config(format!(
                        "method {} needs {b} centroids for layer {} head {}",
                        method.name(),
                        key.0,
                        key.1
                    )));
                }
            }
        }
    }
    Ok(())
}

struct Cell<'a> {
    key: HeadKey,
    method: &'a MethodSpec,
    hyperparams: BTreeMap<String, f64>,
    setting: Setting,
}

impl Cell<'_> {
    fn stream(&self, master: u64, instance: usize) -> u64 {
        let mut label = String::from(self.method.name());
        for (k, v) in &self.hyperparams {
            label.push_str(&format!(";{k}={v}"));
        }
        derive_seed(
            master,
            &[
                hash_str(&label),
                self.key.0 as u64,
                self.key.1 as u64,
                instance as u64,
            ],
        )
    }
}

/// Predicted graph and extra global tokens for one instance.
fn predict(
    cell: &Cell<'_>,
    e: &EvalInstance,
    projected: Option<&(Matrix, Matrix)>,
    art: Option<&HeadArtifacts>,
    master: u64,
) -> Result<(AttentionGraph, Vec<usize>)> {
    let sm = &e.inst.sm;
    let (n, m, causal) = (sm.n(), sm.m(), sm.causal());
    let proj = || projected.ok_or_else(|| Error::Config("missing projection".into()));
    let centroids = |b: usize| {
        art.and_then(|a| a.centroids.get(&b))
            .ok_or_else(|| Error::Config(format!("missing {b} centroids")))
    };
    let seed = cell.stream(master, e.inst.instance);
    let graph = match cell.setting {
        Setting::Distance(t) => {
            let (q, k) = proj()?;
            distance_pairing(q, k, t, causal)?
        }
        Setting::Quantization(beta) => {
            let (q, k) = proj()?;
            let (qa, ka) = quantize_pair(q, k, beta)?;
            buckets_to_graph(&qa, &ka, causal)?
        }
        Setting::Clustering { clusters, top_k } => {
            let (q, k) = proj()?;
            let c = centroids(clusters)?;
            buckets_to_graph(
                &cluster_assign(q, c, top_k)?,
                &cluster_assign(k, c, top_k)?,
                causal,
            )?
        }
        Setting::Window => AttentionGraph::empty(n, m, causal)?,
        Setting::Bigbird { blocks, block_size } => {
            bigbird_random_blocks(n, m, blocks, block_size, causal, seed)?
        }
        Setting::Longformer { globals, selection } => {
            let extra = select_global_tokens(n.min(m), globals, selection, seed);
            return Ok((AttentionGraph::empty(n, m, causal)?, extra));
        }
        Setting::Reformer { buckets, rounds } => {
            let hasher = LshHasher::new(sm.dim(), rounds, buckets, seed)?;
            buckets_to_graph(
                &hasher.assign(sm.queries())?,
                &hasher.assign(sm.keys())?,
                causal,
            )?
        }
        Setting::Routing(b) => {
            let (q, k) = proj()?;
            let c = centroids(b)?;
            let qa = routing_assign(q, c, n.div_ceil(b))?;
            let ka = routing_assign(k, c, m.div_ceil(b))?;
            buckets_to_graph(&qa, &ka, causal)?
        }
    };
    Ok((graph, Vec::new()))
}

fn evaluate_cell(
    cell: &Cell<'_>,
    items: &[(usize, &EvalInstance)],
    projected: &[Option<(Matrix, Matrix)>],
    artifacts: &BTreeMap<HeadKey, HeadArtifacts>,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRecord>> {
    let art = artifacts.get(&cell.key);
    let mut sums = vec![(0.0, 0.0); cfg.windows.len()];
    for &(idx, e) in items {
        let (pred, extra) = predict(cell, e, projected[idx].as_ref(), art, cfg.seed)?;
        let n = e.inst.sm.n();
        let mut globals: Vec<usize> = cfg
            .global_tokens
            .iter()
            .copied()
            .chain(extra)
            .filter(|&g| g < n)
            .collect();
        globals.sort_unstable();
        globals.dedup();
        for (w, sum) in cfg.windows.iter().zip(sums.iter_mut()) {
            let pc = PatternConfig {
                window: *w,
                global_tokens: globals.clone(),
                causal: e.inst.sm.causal(),
            };
            let g = combine_with_patterns(&pred, &pc)?;
            sum.0 += sparsity(&g);
            sum.1 += recall(&g, &e.gold)?;
        }
    }
    let count = items.len() as f64;
    Ok(cfg
        .windows
        .iter()
        .zip(sums)
        .map(|(w, (s, r))| {
            let mut hyperparams = cell.hyperparams.clone();
            hyperparams.insert("window".into(), *w as f64);
            SweepRecord {
                method: cell.method.name().to_string(),
                hyperparams,
                layer: cell.key.0,
                head: cell.key.1,
                sparsity: s / count,
                recall: r / count,
                runtime_ms: None,
            }
        })
        .collect())
}

/// Evaluates every cell on `eval` and returns records in canonical order.
///
/// All fitted artifacts required by the configured methods are checked before
/// any evaluation happens.
pub fn run_sweep(
    eval: &[EvalInstance],
    cfg: &SweepConfig,
    artifacts: &BTreeMap<HeadKey, HeadArtifacts>,
) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let heads: BTreeSet<HeadKey> = eval.iter().map(EvalInstance::key).collect();
    check_artifacts(&heads, cfg, artifacts)?;
    let projected = prepare_projected(eval, artifacts)?;

    let mut by_head: BTreeMap<HeadKey, Vec<(usize, &EvalInstance)>> = BTreeMap::new();
    for (idx, e) in eval.iter().enumerate() {
        by_head.entry(e.key()).or_default().push((idx, e));
    }
    let mut cells = Vec::new();
    for key in &heads {
        for method in &cfg.methods {
            for (hyperparams, setting) in method.settings() {
                cells.push(Cell {
                    key: *key,
                    method,
                    hyperparams,
                    setting,
                });
            }
        }
    }
    let run =
        |cell: &Cell<'_>| evaluate_cell(cell, &by_head[&cell.key], &projected, artifacts, cfg);
    let nested: Vec<Vec<SweepRecord>> = if cfg.parallel {
        cells.par_iter().map(run).collect::<Result<_>>()?
    } else {
        cells.iter().map(run).collect::<Result<_>>()?
    };
    let mut records: Vec<SweepRecord> = nested.into_iter().flatten().collect();
    records.sort_by(SweepRecord::canonical_cmp);
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<SweepRecord>,
    pub eval: Vec<EvalInstance>,
    pub artifacts: BTreeMap<HeadKey, HeadArtifacts>,
    /// Mean sparsity of the held-out gold graphs.
    pub gold_sparsity: f64,
}

/// Full pipeline: gold extraction, per-head train/eval split, fitting, sweep.
pub fn run_experiment(instances: Vec<HeadInstance>, cfg: &SweepConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Config("no instances to evaluate".into()));
    }
    let params = EntmaxParams::with_alpha(cfg.alpha);
    let all = extract_gold(instances, &params, cfg.parallel)?;

    let mut per_head: BTreeMap<HeadKey, Vec<EvalInstance>> = BTreeMap::new();
    for e in all {
        per_head.entry(e.key()).or_default().push(e);
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (key, mut items) in per_head {
        items.sort_by_key(|e| e.inst.instance);
        let count = items.len();
        let mut n_train = (cfg.train_fraction * count as f64).round() as usize;
        if cfg.needs_projection() {
            if count < 2 {
                return Err(Error::Config(format!(
                    "head {key:?} has a single instance; need one to fit and one to evaluate"
                )));
            }
            n_train = n_train.clamp(1, count - 1);
        }
        let rest = items.split_off(n_train.min(count - 1));
        train.extend(items);
        eval.extend(rest);
    }
    let artifacts = fit_artifacts(&train, cfg)?;
    let records = run_sweep(&eval, cfg, &artifacts)?;
    let gold_sparsity = eval.iter().map(|e| sparsity(&e.gold)).sum::<f64>() / eval.len() as f64;
    Ok(ExperimentOutput {
        records,
        eval,
        artifacts,
        gold_sparsity,
    })
}
