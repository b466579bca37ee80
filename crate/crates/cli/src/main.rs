use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attnsparse_core::block::{
    bench_masked_attention, chunk_pair_dataset, chunk_project, BenchConfig, BenchRecord,
    BlockSelector, BlockVariant,
};
use attnsparse_core::harness::{
    aggregate_records, audit_sparse_consistency, extract_gold, frontier_by_method,
    generate_instances, load_qk, read_sweep_csv, report, run_experiment, run_sweep, save_instances,
    write_pareto_csv, AuditConfig, EvalInstance, Generator, HeadArtifacts, HeadInstance, HeadKey,
    SweepConfig, SyntheticSpec,
};
use attnsparse_core::predict::{fit_bins, kmeans_fit, Centroids, KMeansConfig};
use attnsparse_core::projection::PairInstance;
use attnsparse_core::{
    train_projection, EntmaxParams, Error, Matrix, PairDataset, ProjectionHead, Result, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "attnsparse",
    version,
    about = "Sparse entmax attention graph prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Entmax α.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Restrict attention to keys j <= i.
    #[arg(long, global = true)]
    causal: bool,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.5)
    }

    fn params(&self) -> Result<EntmaxParams> {
        let p = EntmaxParams::with_alpha(self.alpha());
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }

    fn read_config<T: serde::de::DeserializeOwned>(&self) -> Result<Option<T>> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    GaussianMixture,
    LowRank,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic query/key tensors and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Key count; defaults to n.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, value_enum, default_value = "gaussian-mixture")]
        generator: GenKind,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 8)]
        instances: usize,
    },
    /// Extract gold entmax graphs from query/key tensors.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one projection per head.
    TrainProj {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 20)]
        min_tokens: usize,
    },
    /// Fit k-means centroids on projected queries and keys.
    FitKmeans {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding trained projections.
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long)]
        clusters: usize,
    },
    /// Fit balanced quantization bins on projected queries and keys.
    FitBins {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long)]
        beta: usize,
    },
    /// Sweep predictors and write sweep.csv, pareto.csv and summary.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Tensor manifest; the config's `data` section is used otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Evaluate every instance with previously fitted artifacts.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Per-method Pareto frontiers of a sweep.csv.
    Pareto {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Time dense against block-sparse attention and write bench.csv.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 16)]
        z: usize,
        #[arg(long, default_value_t = 2)]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_enum, default_value = "v1")]
        variant: VariantArg,
        /// Centroids for v2 selection.
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        /// Synthetic instances used to train the block projection.
        #[arg(long, default_value_t = 4)]
        train_instances: usize,
    },
    /// Audit sparse consistency on random scores and masks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    V1,
    V2,
}

fn head_file(prefix: &str, key: HeadKey, suffix: &str) -> String {
    format!("{prefix}_L{}_H{}{suffix}.txt", key.0, key.1)
}

fn group_heads(items: &[EvalInstance]) -> BTreeMap<HeadKey, Vec<&EvalInstance>> {
    let mut out: BTreeMap<HeadKey, Vec<&EvalInstance>> = BTreeMap::new();
    for e in items {
        out.entry(e.key()).or_default().push(e);
    }
    out
}

fn load_gold(manifest: &Path, common: &Common) -> Result<Vec<EvalInstance>> {
    extract_gold(load_qk(manifest)?, &common.params()?, true)
}

/// Projected queries and keys of a head, stacked.
fn pooled_projection(items: &[&EvalInstance], head: &ProjectionHead) -> Result<Matrix> {
    let mut parts = Vec::new();
    for e in items {
        parts.push(head.project_rows(e.inst.sm.queries())?);
        parts.push(head.project_rows(e.inst.sm.keys())?);
    }
    let mut pooled = parts.remove(0);
    for p in &parts {
        pooled = pooled.vstack(p)?;
    }
    Ok(pooled)
}

fn load_projection(dir: &Path, key: HeadKey) -> Result<ProjectionHead> {
    let path = dir.join(head_file("proj", key, ""));
    if !path.exists() {
        return Err(Error::Config(format!(
            "no projection for layer {} head {} at {}",
            key.0,
            key.1,
            path.display()
        )));
    }
    ProjectionHead::load(&path)
}

fn cmd_gen(common: &Common, spec: SyntheticSpec) -> Result<()> {
    let instances = generate_instances(&spec)?;
    let manifest = save_instances(common.out_dir()?, &instances)?;
    println!(
        "wrote {} instances, manifest {}",
        instances.len(),
        manifest.display()
    );
    Ok(())
}

fn cmd_extract(common: &Common, manifest: &Path) -> Result<()> {
    let gold = load_gold(manifest, common)?;
    let out = common.out_dir()?;
    for e in &gold {
        let name = format!(
            "L{}_H{}_I{}.graph",
            e.inst.layer, e.inst.head, e.inst.instance
        );
        e.gold.save(&out.join(name))?;
    }
    println!("wrote {} gold graphs", gold.len());
    Ok(())
}

fn cmd_train_proj(common: &Common, manifest: &Path, r: usize, min_tokens: usize) -> Result<()> {
    let mut cfg: TrainConfig = common.read_config()?.unwrap_or_default();
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    let gold = load_gold(manifest, common)?;
    let out = common.out_dir()?;
    for (key, items) in group_heads(&gold) {
        let d = items[0].inst.sm.dim();
        let instances = items
            .iter()
            .map(|e| {
                PairInstance::new(
                    e.inst.sm.queries().clone(),
                    e.inst.sm.keys().clone(),
                    e.gold.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = PairDataset::new(instances, min_tokens, cfg.rng_seed)?;
        if ds.positives().is_empty() {
            return Err(Error::Config(format!(
                "layer {} head {}: no instance has more than {min_tokens} tokens",
                key.0, key.1
            )));
        }
        let (head, rep) = train_projection(&ds, &cfg, d, r)?;
        head.save(&out.join(head_file("proj", key, "")))?;
        println!(
            "layer {} head {}: loss {:.4} -> {:.4}",
            key.0,
            key.1,
            rep.head_loss(0.1),
            rep.tail_loss(0.1)
        );
    }
    Ok(())
}

fn cmd_fit_kmeans(common: &Common, manifest: &Path, dir: &Path, clusters: usize) -> Result<()> {
    let mut cfg: KMeansConfig = common.read_config()?.unwrap_or_default();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let gold = load_gold(manifest, common)?;
    let out = common.out_dir()?;
    for (key, items) in group_heads(&gold) {
        let head = load_projection(dir, key)?;
        let fit = kmeans_fit(&pooled_projection(&items, &head)?, clusters, &cfg)?;
        fit.centroids
            .save(&out.join(head_file("centroids", key, &format!("_B{clusters}"))))?;
        println!(
            "layer {} head {}: inertia {:.4} after {} iterations",
            key.0, key.1, fit.inertia, fit.iterations
        );
    }
    Ok(())
}

fn cmd_fit_bins(common: &Common, manifest: &Path, dir: &Path, beta: usize) -> Result<()> {
    let gold = load_gold(manifest, common)?;
    let out = common.out_dir()?;
    for (key, items) in group_heads(&gold) {
        let head = load_projection(dir, key)?;
        let bins = fit_bins(&pooled_projection(&items, &head)?, beta)?;
        bins.save(&out.join(head_file("bins", key, &format!("_b{beta}"))))?;
    }
    println!("wrote bins for {} heads", group_heads(&gold).len());
    Ok(())
}

/// Projections and every centroid file found for the heads in `keys`.
fn load_artifacts(
    dir: &Path,
    keys: impl Iterator<Item = HeadKey>,
    cfg: &SweepConfig,
) -> Result<BTreeMap<HeadKey, HeadArtifacts>> {
    let wanted: Vec<usize> = cfg
        .methods
        .iter()
        .flat_map(|m| m.cluster_counts())
        .collect();
    let mut out = BTreeMap::new();
    for key in keys {
        let mut art = HeadArtifacts::default();
        let proj = dir.join(head_file("proj", key, ""));
        if proj.exists() {
            art.projection = Some(ProjectionHead::load(&proj)?);
        }
        for &b in &wanted {
            let path = dir.join(head_file("centroids", key, &format!("_B{b}")));
            if path.exists() {
                art.centroids.insert(b, Centroids::load(&path)?);
            }
        }
        out.insert(key, art);
    }
    Ok(out)
}

fn cmd_sweep(
    common: &Common,
    manifest: Option<&Path>,
    artifacts: Option<&Path>,
    sequential: bool,
) -> Result<()> {
    let mut cfg: SweepConfig = common
        .read_config()?
        .ok_or_else(|| Error::Config("sweep needs --config".into()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = common.alpha {
        cfg.alpha = alpha;
    }
    if sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    let instances: Vec<HeadInstance> = match (manifest, &cfg.data) {
        (Some(m), _) => load_qk(m)?,
        (None, Some(spec)) => {
            let mut spec = spec.clone();
            spec.causal |= common.causal;
            generate_instances(&spec)?
        }
        (None, None) => {
            return Err(Error::Config(
                "give --manifest or a `data` section in the config".into(),
            ))
        }
    };
    let (records, gold_sparsity) = match artifacts {
        Some(dir) => {
            let eval = extract_gold(
                instances,
                &EntmaxParams::with_alpha(cfg.alpha),
                cfg.parallel,
            )?;
            let arts = load_artifacts(dir, group_heads(&eval).into_keys(), &cfg)?;
            let records = run_sweep(&eval, &cfg, &arts)?;
            let gs = eval
                .iter()
                .map(|e| attnsparse_core::sparsity(&e.gold))
                .sum::<f64>()
                / eval.len().max(1) as f64;
            (records, gs)
        }
        None => {
            let out = run_experiment(instances, &cfg)?;
            (out.records, out.gold_sparsity)
        }
    };
    let summary = report(&records, gold_sparsity, common.out_dir()?)?;
    println!(
        "{} records, gold sparsity {:.4}, report in {}",
        summary.records,
        summary.gold_sparsity,
        common.out.display()
    );
    Ok(())
}

fn cmd_pareto(common: &Common, input: &Path) -> Result<()> {
    let records = read_sweep_csv(input)?;
    if records.is_empty() {
        return Err(Error::Config(format!(
            "{} holds no records",
            input.display()
        )));
    }
    let fronts = frontier_by_method(&aggregate_records(&records))?;
    let path = common.out_dir()?.join("pareto.csv");
    write_pareto_csv(&path, &fronts)?;
    for (method, front) in &fronts {
        println!("{method}: {} frontier points", front.len());
    }
    Ok(())
}

struct BenchArgs {
    n: usize,
    d: usize,
    z: usize,
    top_k: usize,
    window: usize,
    repeats: usize,
    variant: BlockVariant,
    clusters: usize,
    train_instances: usize,
}

fn cmd_bench(common: &Common, a: &BenchArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n: a.n,
        m: a.n,
        d: a.d,
        generator: Generator::GaussianMixture {
            clusters: 4,
            center_norm: 4.0,
            spread: 0.5,
        },
        num_layers: 1,
        num_heads: 1,
        num_instances: a.train_instances + 1,
        alpha: common.alpha(),
        causal: common.causal,
        seed: common.seed(),
    };
    let params = common.params()?;
    let gold = extract_gold(generate_instances(&spec)?, &params, true)?;
    let (test, train) = gold.split_last().expect("at least one instance");
    let items: Vec<(&Matrix, &Matrix, &attnsparse_core::AttentionGraph)> = train
        .iter()
        .map(|e| (e.inst.sm.queries(), e.inst.sm.keys(), &e.gold))
        .collect();
    let ds = chunk_pair_dataset(&items, a.z, common.seed())?;
    let tc = TrainConfig {
        rng_seed: common.seed(),
        ..TrainConfig::default()
    };
    if ds.positives().is_empty() {
        return Err(Error::Config("no block-level positives to train on".into()));
    }
    let (head, _) = train_projection(&ds, &tc, a.d, 4.min(a.d - 1))?;
    let centroids = match a.variant {
        BlockVariant::V1 => None,
        BlockVariant::V2 => {
            let mut pooled: Option<Matrix> = None;
            for (q, k, _) in &items {
                let both = chunk_project(q, a.z, &head)?.vstack(&chunk_project(k, a.z, &head)?)?;
                pooled = Some(match pooled {
                    None => both,
                    Some(p) => p.vstack(&both)?,
                });
            }
            let pooled =
                pooled.ok_or_else(|| Error::Config("v2 needs training instances".into()))?;
            let km = KMeansConfig {
                seed: common.seed(),
                ..KMeansConfig::default()
            };
            Some(kmeans_fit(&pooled, a.clusters, &km)?.centroids)
        }
    };
    let cfg = BenchConfig {
        z: a.z,
        top_k: a.top_k,
        window: a.window,
        repeats: a.repeats,
        variant: a.variant,
        alpha: common.alpha(),
    };
    let res = bench_masked_attention(&test.inst.sm, &BlockSelector { head, centroids }, &cfg)?;
    let path = common.out_dir()?.join("bench.csv");
    write_bench_csv(&path, &[res.dense.clone(), res.block.clone()])?;
    println!(
        "score flops {} vs {} dense ({:.1}%), recall {:.4}, speedup {:.2}x",
        res.block.flops_block,
        res.dense.flops_dense,
        100.0 * res.block.flops_block as f64 / res.dense.flops_dense as f64,
        res.block.recall,
        res.speedup
    );
    Ok(())
}

fn write_bench_csv(path: &Path, rows: &[BenchRecord]) -> Result<()> {
    let mut s = String::from(
        "variant,n,d,z,top_k,window,median_ms,iqr_ms,flops_dense,flops_block,recall,sparsity\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.n,
            r.d,
            r.z,
            r.top_k,
            r.window,
            r.median_ms,
            r.iqr_ms,
            r.flops_dense,
            r.flops_block,
            r.recall,
            r.sparsity
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_verify(common: &Common, trials: usize, max_len: usize) -> Result<bool> {
    let mut cfg: AuditConfig = common.read_config()?.unwrap_or_default();
    cfg.trials = trials;
    cfg.max_len = max_len;
    cfg.alpha = common.alpha.unwrap_or(cfg.alpha);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let rep = audit_sparse_consistency(&cfg)?;
    println!(
        "{} trials, {} failures, max |diff| {:.3e}",
        rep.trials, rep.failures, rep.max_abs_diff
    );
    Ok(rep.failures == 0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Contract(_) => 4,
        Error::Domain(_) | Error::Parse { .. } | Error::Io { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen {
            common,
            n,
            m,
            d,
            generator,
            clusters,
            rank,
            layers,
            heads,
            instances,
        } => {
            let spec = match common.read_config::<SyntheticSpec>()? {
                Some(spec) => spec,
                None => SyntheticSpec {
                    n,
                    m: m.unwrap_or(n),
                    d,
                    generator: match generator {
                        GenKind::GaussianMixture => Generator::GaussianMixture {
                            clusters,
                            center_norm: 4.0,
                            spread: 0.5,
                        },
                        GenKind::LowRank => Generator::LowRank { rank, scale: 4.0 },
                    },
                    num_layers: layers,
                    num_heads: heads,
                    num_instances: instances,
                    alpha: common.alpha(),
                    causal: common.causal,
                    seed: common.seed(),
                },
            };
            spec.validate()?;
            cmd_gen(&common, spec)?;
        }
        Command::Extract { common, manifest } => cmd_extract(&common, &manifest)?,
        Command::TrainProj {
            common,
            manifest,
            r,
            min_tokens,
        } => cmd_train_proj(&common, &manifest, r, min_tokens)?,
        Command::FitKmeans {
            common,
            manifest,
            artifacts,
            clusters,
        } => cmd_fit_kmeans(&common, &manifest, &artifacts, clusters)?,
        Command::FitBins {
            common,
            manifest,
            artifacts,
            beta,
        } => cmd_fit_bins(&common, &manifest, &artifacts, beta)?,
        Command::Sweep {
            common,
            manifest,
            artifacts,
            sequential,
        } => cmd_sweep(
            &common,
            manifest.as_deref(),
            artifacts.as_deref(),
            sequential,
        )?,
        Command::Pareto { common, input } => cmd_pareto(&common, &input)?,
        Command::Bench {
            common,
            n,
            d,
            z,
            top_k,
            window,
            repeats,
            variant,
            clusters,
            train_instances,
        } => cmd_bench(
            &common,
            &BenchArgs {
                n,
                d,
                z,
                top_k,
                window,
                repeats,
                variant: match variant {
                    VariantArg::V1 => BlockVariant::V1,
                    VariantArg::V2 => BlockVariant::V2,
                },
                clusters,
                train_instances,
            },
        )?,
        Command::Verify {
            common,
            trials,
            max_len,
        } => return cmd_verify(&common, trials, max_len),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
