//! Report files: `sweep.csv`, `pareto.csv` and `summary.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pareto_frontier, SweepRecord};
use crate::error::{Error, Result};

const SWEEP_HEADER: [&str; 7] = [
    "method",
    "hyperparams",
    "layer",
    "head",
    "sparsity",
    "recall",
    "runtime_ms",
];

/// Records of one (method, hyperparameters) cell averaged over heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub method: String,
    pub hyperparams: BTreeMap<String, f64>,
    pub sparsity: f64,
    pub recall: f64,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Highest averaged recall among settings at least as sparse as gold.
    pub best_recall_at_gold_sparsity: Option<f64>,
    pub frontier_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub gold_sparsity: f64,
    pub records: usize,
    pub methods: Vec<MethodSummary>,
}

fn encode_hyperparams(hp: &BTreeMap<String, f64>) -> String {
    hp.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_hyperparams(s: &str) -> std::result::Result<BTreeMap<String, f64>, String> {
    if s.is_empty() {
        return Ok(BTreeMap::new());
    }
    s.split(';')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("hyperparameter {kv:?} lacks `=`"))?;
            let v = v
                .parse::<f64>()
                .map_err(|_| format!("bad hyperparameter value {v:?}"))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

/// Averages records over (layer, head) per (method, hyperparameters).
pub fn aggregate_records(records: &[SweepRecord]) -> Vec<AggregateRecord> {
    type Sums = (BTreeMap<String, f64>, f64, f64, usize);
    let mut groups: BTreeMap<(String, String), Sums> = BTreeMap::new();
    for r in records {
        let slot = groups
            .entry((r.method.clone(), encode_hyperparams(&r.hyperparams)))
            .or_insert_with(|| (r.hyperparams.clone(), 0.0, 0.0, 0));
        slot.1 += r.sparsity;
        slot.2 += r.recall;
        slot.3 += 1;
    }
    groups
        .into_iter()
        .map(
            |((method, _), (hyperparams, s, rc, count))| AggregateRecord {
                method,
                hyperparams,
                sparsity: s / count as f64,
                recall: rc / count as f64,
                heads: count,
            },
        )
        .collect()
}

/// Pareto frontier of each method's aggregated records, sorted by sparsity.
pub fn frontier_by_method(
    records: &[AggregateRecord],
) -> Result<BTreeMap<String, Vec<AggregateRecord>>> {
    let mut by_method: BTreeMap<String, Vec<&AggregateRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.clone()).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, recs)| {
            let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.sparsity, r.recall)).collect();
            let front = pareto_frontier(&pts)?
                .into_iter()
                .map(|p| recs[p.index].clone())
                .collect();
            Ok((method, front))
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.method.clone(),
            encode_hyperparams(&r.hyperparams),
            r.layer.to_string(),
            r.head.to_string(),
            r.sparsity.to_string(),
            r.recall.to_string(),
            r.runtime_ms.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(Error::parse(
            path,
            1,
            format!("unexpected header {header:?}"),
        ));
    }
    let mut out = Vec::new();
    for (idx, row) in rd.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = idx + 2;
        let bad = |msg: String| Error::parse(path, line, msg);
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad {} value {:?}", SWEEP_HEADER[i], &row[i])))
        };
        let int = |i: usize| -> Result<usize> {
            row[i]
                .parse::<usize>()
                .map_err(|_| bad(format!("bad {} value {:?}", SWEEP_HEADER[i], &row[i])))
        };
        if row.len() != SWEEP_HEADER.len() {
            return Err(bad(format!("expected {} fields", SWEEP_HEADER.len())));
        }
        out.push(SweepRecord {
            method: row[0].to_string(),
            hyperparams: decode_hyperparams(&row[1]).map_err(bad)?,
            layer: int(2)?,
            head: int(3)?,
            sparsity: num(4)?,
            recall: num(5)?,
            runtime_ms: if row[6].is_empty() {
                None
            } else {
                Some(num(6)?)
            },
        });
    }
    Ok(out)
}

pub fn write_pareto_csv(
    path: &Path,
    fronts: &BTreeMap<String, Vec<AggregateRecord>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["method", "hyperparams", "sparsity", "recall"])
        .map_err(|e| csv_err(path, e))?;
    for (method, front) in fronts {
        for r in front {
            w.write_record([
                method.clone(),
                encode_hyperparams(&r.hyperparams),
                r.sparsity.to_string(),
                r.recall.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the three report files into `dir` and returns the summary.
pub fn report(records: &[SweepRecord], gold_sparsity: f64, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_sweep_csv(&dir.join("sweep.csv"), records)?;
    let agg = aggregate_records(records);
    let fronts = if agg.is_empty() {
        BTreeMap::new()
    } else {
        frontier_by_method(&agg)?
    };
    write_pareto_csv(&dir.join("pareto.csv"), &fronts)?;

    let methods = fronts
        .iter()
        .map(|(method, front)| MethodSummary {
            method: method.clone(),
            best_recall_at_gold_sparsity: agg
                .iter()
                .filter(|r| &r.method == method && r.sparsity >= gold_sparsity)
                .map(|r| r.recall)
                .reduce(f64::max),
            frontier_points: front.len(),
        })
        .collect();
    let summary = Summary {
        gold_sparsity,
        records: records.len(),
        methods,
    };
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
