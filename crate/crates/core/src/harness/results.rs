use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{mean_std, Method, RunResult};
use crate::error::{Error, IoContext, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATES_FILE: &str = "aggregates.json";
const AGGREGATES_CSV: &str = "aggregates.csv";
const PARTIAL_FILE: &str = "results.partial.csv";
const MARKER_FILE: &str = "results.key";

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    method: Method,
    n: usize,
    seed: u64,
    macro_f1: f64,
    accuracy: f64,
    f1_supports: f64,
    f1_refutes: f64,
    f1_not_enough_info: f64,
}

impl From<&RunResult> for Record {
    fn from(r: &RunResult) -> Self {
        Record {
            method: r.method,
            n: r.n,
            seed: r.seed,
            macro_f1: r.macro_f1,
            accuracy: r.accuracy,
            f1_supports: r.classwise_f1[0],
            f1_refutes: r.classwise_f1[1],
            f1_not_enough_info: r.classwise_f1[2],
        }
    }
}

impl From<Record> for RunResult {
    fn from(r: Record) -> Self {
        RunResult {
            method: r.method,
            n: r.n,
            seed: r.seed,
            macro_f1: r.macro_f1,
            accuracy: r.accuracy,
            classwise_f1: [r.f1_supports, r.f1_refutes, r.f1_not_enough_info],
            wall_time: Duration::ZERO,
        }
    }
}

/// Writes one row per result. Wall times are not part of the file so that
/// identical runs produce identical bytes.
pub fn write_results(path: &Path, rows: &[RunResult]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(Record::from(r))?;
        }
        w.flush().with_path(&tmp)?;
    }
    std::fs::rename(&tmp, path).with_path(path)
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Record>().map(|rec| Ok(rec?.into())).collect()
}

/// Rows from a finished results file and from an interrupted run's partial
/// file. A truncated final line of the partial file is ignored.
pub(super) fn read_existing(dir: &Path) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    let full = dir.join(RESULTS_FILE);
    if full.exists() {
        out.extend(read_results(&full)?);
    }
    let partial = dir.join(PARTIAL_FILE);
    if partial.exists() {
        let mut r = csv::Reader::from_path(&partial)?;
        for rec in r.deserialize::<Record>() {
            match rec {
                Ok(rec) => out.push(rec.into()),
                Err(e) => {
                    log::warn!("ignoring unreadable row in {}: {e}", partial.display());
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Refuses to mix results produced under different cell settings.
pub(super) fn check_config_marker(dir: &Path, key: &str) -> Result<()> {
    let path = dir.join(MARKER_FILE);
    if path.exists() {
        let stored = std::fs::read_to_string(&path).with_path(&path)?;
        if stored.trim() != key {
            return Err(Error::Inconsistent(format!(
                "{} holds results from different settings; use another output directory",
                dir.display()
            )));
        }
        return Ok(());
    }
    std::fs::write(&path, format!("{key}\n")).with_path(&path)
}

pub(super) struct PartialWriter {
    file: File,
    path: std::path::PathBuf,
}

impl PartialWriter {
    pub(super) fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(PARTIAL_FILE);
        if path.exists() {
            // Drop a row cut short by an interruption.
            let bytes = std::fs::read(&path).with_path(&path)?;
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < bytes.len() {
                std::fs::write(&path, &bytes[..keep]).with_path(&path)?;
            }
        }
        let fresh = !path.exists() || std::fs::metadata(&path).with_path(&path)?.len() == 0;
        let mut file = OpenOptions::new().create(true).append(true).open(&path).with_path(&path)?;
        if fresh {
            file.write_all(b"method,n,seed,macro_f1,accuracy,f1_supports,f1_refutes,f1_not_enough_info\n")
                .with_path(&path)?;
        }
        Ok(PartialWriter { file, path })
    }

    pub(super) fn append(&mut self, r: &RunResult) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(Record::from(r))?;
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        self.file.write_all(&bytes).with_path(&self.path)?;
        self.file.flush().with_path(&self.path)
    }
}

pub(super) fn remove_partial(dir: &Path) -> Result<()> {
    let path = dir.join(PARTIAL_FILE);
    if path.exists() {
        std::fs::remove_file(&path).with_path(&path)?;
    }
    Ok(())
}

/// Mean and sample standard deviation of one (method, shots) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub n: usize,
    pub count: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Mean per-label F1 in label order.
    pub classwise_f1_mean: [f64; 3],
    /// Set when the cell has a single row and its std is reported as 0.
    pub single_row: bool,
}

pub fn aggregate(rows: &[RunResult]) -> Result<Vec<Aggregate>> {
    let mut cells: BTreeMap<(Method, usize), Vec<&RunResult>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method, r.n)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, n), rs)| {
            let f1: Vec<f64> = rs.iter().map(|r| r.macro_f1).collect();
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let (macro_f1_mean, macro_f1_std, single_row) = mean_std(&f1)?;
            let (accuracy_mean, accuracy_std, _) = mean_std(&acc)?;
            let classwise_f1_mean =
                std::array::from_fn(|c| rs.iter().map(|r| r.classwise_f1[c]).sum::<f64>() / rs.len() as f64);
            Ok(Aggregate {
                method,
                n,
                count: rs.len(),
                macro_f1_mean,
                macro_f1_std,
                accuracy_mean,
                accuracy_std,
                classwise_f1_mean,
                single_row,
            })
        })
        .collect()
}

pub(super) fn write_aggregates(dir: &Path, aggregates: &[Aggregate]) -> Result<()> {
    let path = dir.join(AGGREGATES_FILE);
    let mut json = serde_json::to_string_pretty(aggregates)?;
    json.push('\n');
    std::fs::write(&path, json).with_path(&path)?;

    let path = dir.join(AGGREGATES_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "method",
        "n",
        "count",
        "macro_f1_mean",
        "macro_f1_std",
        "accuracy_mean",
        "accuracy_std",
        "f1_supports_mean",
        "f1_refutes_mean",
        "f1_not_enough_info_mean",
    ])?;
    for a in aggregates {
        w.write_record([
            a.method.to_string(),
            a.n.to_string(),
            a.count.to_string(),
            format!("{:.4}", a.macro_f1_mean),
            format!("{:.4}", a.macro_f1_std),
            format!("{:.4}", a.accuracy_mean),
            format!("{:.4}", a.accuracy_std),
            format!("{:.4}", a.classwise_f1_mean[0]),
            format!("{:.4}", a.classwise_f1_mean[1]),
            format!("{:.4}", a.classwise_f1_mean[2]),
        ])?;
    }
    w.flush().with_path(&path)
}

/// Aggregates the results stored in `dir` and writes the tables and the F1
/// plot next to them.
pub fn report(dir: &Path, title: &str) -> Result<Vec<Aggregate>> {
    let mut rows = read_existing(dir)?;
    if rows.is_empty() {
        return Err(Error::MissingCache {
            path: dir.join(RESULTS_FILE),
            hint: "maple run".into(),
        });
    }
    rows.sort_by_key(|r| r.cell());
    rows.dedup_by_key(|r| r.cell());
    let aggregates = aggregate(&rows)?;
    write_aggregates(dir, &aggregates)?;
    super::plot_f1_curves(&aggregates, &dir.join("f1_vs_shots.svg"), title)?;
    Ok(aggregates)
}
