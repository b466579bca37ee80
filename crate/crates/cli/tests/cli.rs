use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attnsparse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SWEEP: &str = r#"{
    "seed": 3,
    "windows": [0, 3],
    "methods": [
        {"kind": "window"},
        {"kind": "clustering", "clusters": [2, 4], "top_k": [1, 2]},
        {"kind": "distance", "thresholds": [1.0, 2.0]},
        {"kind": "reformer", "buckets": [2, 4]}
    ],
    "data": {"n": 24, "m": 24, "d": 8, "generator": {"kind": "gaussian-mixture", "clusters": 3},
             "num_heads": 2, "num_instances": 4, "seed": 1}
}"#;

#[test]
fn sweep_is_byte_identical_across_runs_and_threading() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    std::fs::write(&cfg, SWEEP).unwrap();
    let mut csvs = Vec::new();
    for (name, extra) in [("a", None), ("b", None), ("c", Some("--sequential"))] {
        let out = dir.path().join(name);
        let mut args = vec!["sweep", "--config", p(&cfg), "--out", p(&out)];
        args.extend(extra);
        ok(&args);
        csvs.push(std::fs::read(out.join("sweep.csv")).unwrap());
        assert!(out.join("pareto.csv").exists());
        assert!(out.join("summary.json").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn staged_pipeline_with_saved_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let art = dir.path().join("art");
    let d = p(&data);
    let a = p(&art);
    ok(&[
        "gen",
        "--n",
        "24",
        "--d",
        "8",
        "--instances",
        "3",
        "--seed",
        "2",
        "--out",
        d,
    ]);
    let manifest = data.join("manifest.json");
    let m = p(&manifest);
    ok(&[
        "extract",
        "--manifest",
        m,
        "--out",
        p(&dir.path().join("gold")),
    ]);
    assert!(dir.path().join("gold/L0_H0_I2.graph").exists());
    ok(&["train-proj", "--manifest", m, "--out", a]);
    ok(&[
        "fit-kmeans",
        "--manifest",
        m,
        "--artifacts",
        a,
        "--clusters",
        "2",
        "--out",
        a,
    ]);
    ok(&[
        "fit-bins",
        "--manifest",
        m,
        "--artifacts",
        a,
        "--beta",
        "3",
        "--out",
        a,
    ]);
    for f in [
        "proj_L0_H0.txt",
        "centroids_L0_H0_B2.txt",
        "bins_L0_H0_b3.txt",
    ] {
        assert!(art.join(f).exists(), "{f}");
    }

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"methods": [{"kind": "clustering", "clusters": [2]}, {"kind": "distance", "thresholds": [1.0]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("report");
    ok(&[
        "sweep",
        "--config",
        p(&cfg),
        "--manifest",
        m,
        "--artifacts",
        a,
        "--out",
        p(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    ok(&[
        "pareto",
        "--input",
        p(&out.join("sweep.csv")),
        "--out",
        p(&dir.path().join("front")),
    ]);
    assert!(dir.path().join("front/pareto.csv").exists());

    // centroids for 8 clusters were never fitted
    std::fs::write(
        &cfg,
        r#"{"methods": [{"kind": "clustering", "clusters": [8]}]}"#,
    )
    .unwrap();
    let res = run(&[
        "sweep",
        "--config",
        p(&cfg),
        "--manifest",
        m,
        "--artifacts",
        a,
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["sweep", "--out", p(dir.path())]).status.code(),
        Some(2)
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["sweep", "--config", p(&bad)]).status.code(), Some(2));

    let data = dir.path().join("data");
    ok(&[
        "gen",
        "--n",
        "6",
        "--d",
        "3",
        "--instances",
        "1",
        "--out",
        p(&data),
    ]);
    std::fs::write(data.join("L0_H0_I0_Q.tensor"), "TENSOR 6 3\n1 2 3\n").unwrap();
    let res = run(&[
        "extract",
        "--manifest",
        p(&data.join("manifest.json")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("L0_H0_I0_Q.tensor"));

    assert_eq!(run(&["verify", "--alpha", "0.5"]).status.code(), Some(2));
}

#[test]
fn verify_reports_clean_audit() {
    let out = ok(&["verify", "--trials", "200", "--seed", "4"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failures"));
}

#[test]
fn bench_writes_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "bench",
        "--n",
        "64",
        "--d",
        "8",
        "--z",
        "8",
        "--repeats",
        "3",
        "--out",
        p(dir.path()),
    ]);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("variant,n,d,z,top_k,window,median_ms,iqr_ms,flops_dense,flops_block,recall,sparsity")
    );
    assert!(lines.next().unwrap().starts_with("dense,64,8,8,2,0,"));
    assert!(lines.next().unwrap().starts_with("v1,64,8,8,2,0,"));

    ok(&[
        "bench",
        "--n",
        "64",
        "--d",
        "8",
        "--z",
        "8",
        "--repeats",
        "3",
        "--variant",
        "v2",
        "--out",
        p(dir.path()),
    ]);
    assert!(std::fs::read_to_string(dir.path().join("bench.csv"))
        .unwrap()
        .contains("\nv2,"));
}
