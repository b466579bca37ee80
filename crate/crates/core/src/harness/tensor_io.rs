//! Portable tensor files (`TENSOR n d` + n rows of d floats) and the JSON
//! manifest that groups them into query/key pairs per head.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HeadInstance;
use crate::error::{Error, Result};
use crate::graph::ScoreMatrix;
use crate::linalg::Matrix;
use crate::textio::{fmt_f64, parse_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Q,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer: usize,
    pub head: usize,
    #[serde(default)]
    pub instance: usize,
    pub role: Role,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub causal: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn save_tensor(path: &Path, x: &Matrix) -> Result<()> {
    let mut s = String::with_capacity(16 + x.rows() * x.cols() * 24);
    let _ = writeln!(s, "TENSOR {} {}", x.rows(), x.cols());
    for row in x.iter_rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty tensor file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (n, d) = match fields[..] {
        ["TENSOR", n, d] => (
            n.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad row count {n:?}")))?,
            d.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad column count {d:?}")))?,
        ),
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("header must be `TENSOR n d`, got {header:?}"),
            ))
        }
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("more than the declared {n} rows"),
            ));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v = parse_f64(tok, path, lineno + 1)?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("non-finite value {tok}"),
                ));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {d} values, found {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("header declares {n} rows but {rows} are present"),
        ));
    }
    Matrix::from_vec(n, d, data)
}

fn tensor_name(inst: &HeadInstance, role: Role) -> String {
    format!(
        "L{}_H{}_I{}_{}.tensor",
        inst.layer,
        inst.head,
        inst.instance,
        match role {
            Role::Q => "Q",
            Role::K => "K",
        }
    )
}

/// Writes one tensor per query/key matrix plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn save_instances(dir: &Path, instances: &[HeadInstance]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    for inst in instances {
        for (role, x) in [(Role::Q, inst.sm.queries()), (Role::K, inst.sm.keys())] {
            let name = tensor_name(inst, role);
            save_tensor(&dir.join(&name), x)?;
            manifest.entries.push(ManifestEntry {
                layer: inst.layer,
                head: inst.head,
                instance: inst.instance,
                role,
                path: PathBuf::from(name),
                causal: inst.sm.causal(),
            });
        }
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads every (Q, K) pair listed in a manifest, ordered by (layer, head, instance).
pub fn load_qk(manifest_path: &Path) -> Result<Vec<HeadInstance>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(manifest_path, e.line(), format!("invalid manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    type Slot = (Option<Matrix>, Option<Matrix>, bool);
    let mut grouped: BTreeMap<(usize, usize, usize), Slot> = BTreeMap::new();
    for entry in &manifest.entries {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let x = load_tensor(&path)?;
        let slot = grouped
            .entry((entry.layer, entry.head, entry.instance))
            .or_insert((None, None, entry.causal));
        if slot.2 != entry.causal {
            return Err(Error::parse(
                manifest_path,
                0,
                format!("Q and K of {:?} disagree on causality", entry.path),
            ));
        }
        let target = match entry.role {
            Role::Q => &mut slot.0,
            Role::K => &mut slot.1,
        };
        if target.replace(x).is_some() {
            return Err(Error::parse(
                manifest_path,
                0,
                format!(
                    "duplicate {:?} entry for layer {} head {} instance {}",
                    entry.role, entry.layer, entry.head, entry.instance
                ),
            ));
        }
    }
    grouped
        .into_iter()
        .map(|((layer, head, instance), (q, k, causal))| {
            let (Some(q), Some(k)) = (q, k) else {
                return Err(Error::parse(
                    manifest_path,
                    0,
                    format!("layer {layer} head {head} instance {instance} lacks a Q or K tensor"),
                ));
            };
            let sm = ScoreMatrix::new(q, k, causal).map_err(|e| {
                Error::parse(
                    manifest_path,
                    0,
                    format!("layer {layer} head {head} instance {instance}: {e}"),
                )
            })?;
            Ok(HeadInstance {
                layer,
                head,
                instance,
                sm,
            })
        })
        .collect()
}
