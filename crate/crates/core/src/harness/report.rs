use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{scale_name, Method};
use super::pipeline::{write_json, Run};
use crate::datagen::SplitLabel;
use crate::error::{Error, Result};
use crate::metrics::{read_metrics_csv, MetricsReport, Subset};

/// Marker written into table cells that have no value.
pub const GAP: &str = "NA";

pub const TABLE_COLUMNS: [&str; 8] = ["subset", "method", "MAE", "RMSE", "MisCal", "Sha", "Cv", "NLL"];

/// What `report` produced and which (split, method) cells were absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOutcome {
    pub tables: Vec<PathBuf>,
    pub missing: Vec<(SplitLabel, Method)>,
}

fn subsets_of(split: SplitLabel) -> &'static [Subset] {
    if split.region().is_some() {
        &[Subset::All, Subset::InRegion, Subset::HeldOut]
    } else {
        &[Subset::All]
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| GAP.to_string(), |x| format!("{x:.4e}"))
}

fn table_rows(split: SplitLabel, found: &[(Method, Vec<MetricsReport>)]) -> Vec<[String; 8]> {
    let mut out = Vec::new();
    for &subset in subsets_of(split) {
        for method in Method::TABLE {
            let row = found
                .iter()
                .find(|(m, _)| *m == method)
                .and_then(|(_, rows)| rows.iter().find(|r| r.subset == subset && r.output == "pooled"));
            out.push([
                subset.label().to_string(),
                method.label().to_string(),
                cell(row.map(|r| r.mae)),
                cell(row.map(|r| r.rmse)),
                cell(row.and_then(|r| r.miscal)),
                cell(row.and_then(|r| r.sha)),
                cell(row.and_then(|r| r.cv)),
                cell(row.and_then(|r| r.nll)),
            ]);
        }
    }
    out
}

fn write_table(rows: &[[String; 8]], csv_path: &Path, txt_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(csv_path)?);
    writeln!(w, "{}", TABLE_COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;

    let mut width = TABLE_COLUMNS.map(str::len);
    for r in rows {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.len());
        }
    }
    let line = |cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:>w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut w = BufWriter::new(File::create(txt_path)?);
    writeln!(w, "{}", line(&TABLE_COLUMNS))?;
    for r in rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        writeln!(w, "{}", line(&cells))?;
    }
    w.flush()?;
    Ok(())
}

/// Concatenates the per-method sample exports of a split under one header.
fn merge_samples(run: &Run, split: SplitLabel, out: &Path) -> Result<bool> {
    let mut w: Option<BufWriter<File>> = None;
    for method in Method::TABLE {
        let path = run.eval_dir(split, method).join("samples.csv");
        if !path.exists() {
            continue;
        }
        let mut lines = BufReader::new(File::open(&path)?).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let w = match &mut w {
            Some(w) => w,
            None => {
                let mut f = BufWriter::new(File::create(out)?);
                writeln!(f, "{header}")?;
                w.insert(f)
            }
        };
        for line in lines {
            writeln!(w, "{}", line?)?;
        }
    }
    match w {
        Some(mut w) => {
            w.flush()?;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Builds the per-split comparison tables and posterior-sample exports from
/// whatever evaluations exist. Absent cells are filled with [`GAP`].
pub fn report(run: &Run) -> Result<ReportOutcome> {
    let dir = run.reports_dir();
    std::fs::create_dir_all(&dir)?;
    let mut outcome = ReportOutcome::default();
    let mut any = false;
    for &split in &run.cfg.splits {
        let mut found = Vec::new();
        for method in Method::TABLE {
            let path = run.eval_dir(split, method).join("metrics.csv");
            if path.exists() {
                found.push((method, read_metrics_csv(&path)?));
            } else {
                outcome.missing.push((split, method));
            }
        }
        if found.is_empty() {
            continue;
        }
        any = true;
        let csv_path = dir.join(format!("table_{}.csv", split.slug()));
        write_table(&table_rows(split, &found), &csv_path, &dir.join(format!("table_{}.txt", split.slug())))?;
        outcome.tables.push(csv_path);
        if merge_samples(run, split, &dir.join(format!("posterior_samples_{}.csv", split.slug())))? {
            let points = run.dir().join("eval").join(split.slug()).join("export_points.csv");
            if points.exists() {
                std::fs::copy(&points, dir.join(format!("export_points_{}.csv", split.slug())))?;
            }
        }
    }
    if !any {
        return Err(Error::Missing("no evaluation results found; run evaluate first".into()));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub scale: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        h.update(&buf[..n]);
    }
    Ok((total, hex::encode(h.finalize())))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else if path.strip_prefix(root).is_ok_and(|p| p != Path::new(MANIFEST_FILE)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Appends a stage timing and rehashes every file under the run directory.
pub fn update_manifest(run: &Run, stage: &str, seconds: f64) -> Result<Manifest> {
    let root = run.dir();
    std::fs::create_dir_all(root)?;
    let path = root.join(MANIFEST_FILE);
    let mut stages = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .map(|m| m.stages)
        .unwrap_or_default();
    stages.push(StageRecord {
        stage: stage.to_string(),
        seconds,
    });
    let mut paths = Vec::new();
    walk(root, root, &mut paths)?;
    paths.sort();
    let files = paths
        .iter()
        .map(|p| {
            let (bytes, sha256) = sha256_file(p)?;
            let rel = p.strip_prefix(root).unwrap_or(p);
            Ok(FileRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes,
                sha256,
            })
        })
        .collect::<Result<_>>()?;
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scale: scale_name(run.cfg.scale).to_string(),
        seed: run.cfg.seed,
        stages,
        files,
    };
    write_json(&path, &m)?;
    Ok(m)
}
