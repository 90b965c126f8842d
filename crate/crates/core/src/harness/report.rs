use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (method, grid point, seed) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub method: String,
    /// Empty when the experiment has no grid.
    pub grid_key: String,
    pub grid_value: Option<f64>,
    pub seed: u64,
    /// Absent for latency rows, which time untrained models.
    pub test_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub train_ms: f64,
    pub infer_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown report format {other:?} (csv | jsonl)"))),
        }
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate over seeds for one method at one grid point. Standard
/// deviations are population (divide by n), as the column names say.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub grid_key: String,
    pub grid_value: Option<f64>,
    pub n: usize,
    pub test_mean: Option<f64>,
    pub test_std_pop: Option<f64>,
    pub val_mean: Option<f64>,
    pub val_std_pop: Option<f64>,
    pub train_ms_mean: f64,
    pub infer_ms_mean: f64,
}

/// Group rows by (experiment, method, grid point) in first-seen order.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(&MetricRow, Vec<&MetricRow>)> = Vec::new();
    for r in rows {
        let same = |g: &MetricRow| {
            g.experiment == r.experiment
                && g.method == r.method
                && g.grid_key == r.grid_key
                && g.grid_value.map(f64::to_bits) == r.grid_value.map(f64::to_bits)
        };
        match groups.iter_mut().find(|(g, _)| same(g)) {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(head, members)| {
            let stat = |f: fn(&MetricRow) -> Option<f64>| {
                let xs: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
                if xs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&xs);
                    (Some(m), Some(s))
                }
            };
            let (test_mean, test_std_pop) = stat(|r| r.test_acc);
            let (val_mean, val_std_pop) = stat(|r| r.val_acc);
            let avg = |f: fn(&MetricRow) -> f64| mean_std(&members.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
            SummaryRow {
                experiment: head.experiment.clone(),
                method: head.method.clone(),
                grid_key: head.grid_key.clone(),
                grid_value: head.grid_value,
                n: members.len(),
                test_mean,
                test_std_pop,
                val_mean,
                val_std_pop,
                train_ms_mean: avg(|r| r.train_ms),
                infer_ms_mean: avg(|r| r.infer_ms),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "experiment,method,grid_key,grid_value,seed,test_acc,val_acc,train_ms,infer_ms";

fn csv_bytes<T: Serialize>(rows: &[T], header: &str) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let mut out = format!("{header}\n").into_bytes();
    out.extend(body);
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The summary file written next to a report: `<stem>.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.summary.csv"))
}

/// Write the rows as CSV or JSON lines, plus the per-group summary CSV.
/// Returns the summary's path.
pub fn emit_report(rows: &[MetricRow], path: &Path, format: ReportFormat) -> Result<PathBuf> {
    let bytes = match format {
        ReportFormat::Csv => csv_bytes(rows, CSV_HEADER)?,
        ReportFormat::Jsonl => {
            let mut out = Vec::new();
            for r in rows {
                serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
                out.write_all(b"\n").expect("write to Vec");
            }
            out
        }
    };
    write_file(path, &bytes)?;
    let summary = summary_path(path);
    let header = "experiment,method,grid_key,grid_value,n,test_mean,test_std_pop,val_mean,val_std_pop,train_ms_mean,infer_ms_mean";
    write_file(&summary, &csv_bytes(&summarize(rows), header)?)?;
    Ok(summary)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
