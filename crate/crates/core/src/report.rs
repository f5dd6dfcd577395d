//! CSV/JSON export. Floats use 9 significant digits in scientific notation
//! so files are byte-stable across re-exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{Trace, TraceMeta};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, Summary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    /// Data rows, excluding the header.
    pub rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn rows(&self, name: &str) -> Option<usize> {
        self.files
            .iter()
            .find(|e| e.path.file_name().is_some_and(|f| f == name))
            .map(|e| e.rows)
    }
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_file(dir: &Path, name: &str, body: String, rows: usize, manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    manifest.files.push(ManifestEntry { path, rows });
    Ok(())
}

pub fn trace_csv(trace: &Trace) -> (String, usize) {
    let m = trace.meta.m;
    let mut out = String::from("step,device,resource,x,x_bar,grad_at_xbar\n");
    let mut rows = 0;
    for r in &trace.rows {
        for (idx, ((x, xb), g)) in r.x.iter().zip(&r.x_bar).zip(&r.grad).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                idx / m,
                idx % m,
                fmt_float(*x),
                fmt_float(*xb),
                fmt_float(*g)
            );
            rows += 1;
        }
    }
    (out, rows)
}

pub fn events_csv(trace: &Trace) -> (String, usize) {
    let mut out = String::from("step,resource,S\n");
    let mut rows = 0;
    for e in trace.events.entries() {
        for (j, &b) in e.bits.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", e.k, j, b as u8);
            rows += 1;
        }
    }
    (out, rows)
}

pub fn metrics_csv(report: &MetricsReport, m: usize) -> (String, usize) {
    let s = &report.series;
    let mut out = String::from("step");
    for prefix in ["spread", "sum_x_bar", "sum_x", "bits"] {
        for j in 0..m {
            let _ = write!(out, ",{prefix}_{j}");
        }
        if prefix == "spread" {
            out.push_str(",cost_ratio");
        }
    }
    out.push('\n');
    for k in 0..s.cost_ratio.len() {
        let _ = write!(out, "{k}");
        for v in &s.spread[k] {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        let _ = write!(out, ",{}", fmt_float(s.cost_ratio[k]));
        for v in s.average_totals[k].iter().chain(&s.totals[k]) {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        for b in &s.cumulative_bits[k] {
            let _ = write!(out, ",{b}");
        }
        out.push('\n');
    }
    (out, s.cost_ratio.len())
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    meta: &'a TraceMeta,
    #[serde(flatten)]
    summary: &'a Summary,
}

pub fn summary_json(trace: &Trace, report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(&SummaryFile {
        meta: &trace.meta,
        summary: &report.summary,
    })
    .expect("summary is serializable");
    s.push('\n');
    s
}

/// Writes `trace.csv`, `events.csv`, `metrics.csv` and `summary.json` into `dir`.
pub fn export_trace(trace: &Trace, report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    let (body, rows) = trace_csv(trace);
    write_file(dir, "trace.csv", body, rows, &mut manifest)?;
    let (body, rows) = events_csv(trace);
    write_file(dir, "events.csv", body, rows, &mut manifest)?;
    let (body, rows) = metrics_csv(report, trace.meta.m);
    write_file(dir, "metrics.csv", body, rows, &mut manifest)?;
    write_file(dir, "summary.json", summary_json(trace, report), 1, &mut manifest)?;
    Ok(manifest)
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = serde_json::to_string_pretty(value).expect("value is serializable");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
