//! Deterministic vs stochastic runs on identical cost functions and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::aimd::Mode;
use crate::config::Config;
use crate::engine::{run, Trace};
use crate::error::{Error, Result};
use crate::metrics::{median, DistanceRow};
use crate::report::{fmt_float, write_json, Manifest, ManifestEntry};

/// First step from which the normalized derivative spread of every
/// resource stays at or below `threshold` through the end of the run.
pub fn convergence_step(trace: &Trace, threshold: f64) -> Option<u64> {
    let s = &trace.series;
    let m = trace.meta.m;
    let last = s.spread.len() - 1;
    let within = |k: usize| (0..m).all(|j| s.normalized_spread(k, j) <= threshold);
    if !within(last) {
        return None;
    }
    let mut k = last;
    while k > 0 && within(k - 1) {
        k -= 1;
    }
    Some(k as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub convergence_step: Option<u64>,
    pub event_bits: Vec<u64>,
    /// Bits broadcast up to the convergence step.
    pub event_bits_to_convergence: Option<Vec<u64>>,
    pub final_spread: Vec<f64>,
    pub wall_time_secs: f64,
}

impl ModeSummary {
    fn new(trace: &Trace, threshold: f64) -> Result<Self> {
        let step = convergence_step(trace, threshold);
        Ok(ModeSummary {
            mode: trace.meta.mode,
            convergence_step: step,
            event_bits: trace.event_bits(trace.meta.steps)?,
            event_bits_to_convergence: step.map(|k| trace.event_bits(k)).transpose()?,
            final_spread: trace.series.spread.last().cloned().unwrap_or_default(),
            wall_time_secs: trace.wall_time_secs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub spread_threshold: f64,
    pub final_median_difference: f64,
    pub final_max_difference: f64,
    pub first: ModeSummary,
    pub second: ModeSummary,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub first: Trace,
    pub second: Trace,
    /// `|x̄_first − x̄_second|` at every step traced by both runs.
    pub differences: Vec<DistanceRow>,
    pub summary: ComparisonSummary,
}

/// Compares two finished runs of the same population.
pub fn compare_traces(first: Trace, second: Trace, spread_threshold: f64) -> Result<ComparisonReport> {
    if (first.meta.n, first.meta.m) != (second.meta.n, second.meta.m) {
        return Err(Error::LengthMismatch {
            expected: first.meta.n * first.meta.m,
            got: second.meta.n * second.meta.m,
        });
    }
    let mut differences = Vec::new();
    let mut b = second.rows.iter().peekable();
    for ra in &first.rows {
        while b.peek().is_some_and(|rb| rb.step < ra.step) {
            b.next();
        }
        if let Some(rb) = b.peek().filter(|rb| rb.step == ra.step) {
            differences.push(DistanceRow {
                step: ra.step,
                distance: ra.x_bar.iter().zip(&rb.x_bar).map(|(u, v)| (u - v).abs()).collect(),
            });
        }
    }
    let final_diff: Vec<f64> = first
        .final_averages()
        .iter()
        .flatten()
        .zip(second.final_averages().iter().flatten())
        .map(|(u, v)| (u - v).abs())
        .collect();
    let summary = ComparisonSummary {
        spread_threshold,
        final_median_difference: median(&final_diff),
        final_max_difference: final_diff.iter().copied().fold(0.0, f64::max),
        first: ModeSummary::new(&first, spread_threshold)?,
        second: ModeSummary::new(&second, spread_threshold)?,
    };
    Ok(ComparisonReport {
        first,
        second,
        differences,
        summary,
    })
}

/// Runs the deterministic and the stochastic variant concurrently and
/// compares them. `first` is deterministic, `second` stochastic.
pub fn compare_modes(config: &Config) -> Result<ComparisonReport> {
    config.validate()?;
    let (d, s) = std::thread::scope(|scope| {
        let d = scope.spawn(|| run(config, Mode::Deterministic));
        let s = run(config, Mode::Stochastic);
        (d.join().expect("deterministic run panicked"), s)
    });
    compare_traces(d?, s?, config.compare.spread_threshold)
}

/// Writes `compare.csv`, `compare_series.csv` and `comparison.json`.
pub fn export_comparison(report: &ComparisonReport, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = report.first.meta.m;
    let mut manifest = Manifest::default();

    let mut out = String::from("step,device,resource,abs_diff\n");
    let mut rows = 0;
    for r in &report.differences {
        for (idx, d) in r.distance.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.step, idx / m, idx % m, fmt_float(*d));
            rows += 1;
        }
    }
    let path = dir.join("compare.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    manifest.files.push(ManifestEntry { path, rows });

    let (a, b) = (&report.first, &report.second);
    let (la, lb) = (a.meta.mode.label(), b.meta.mode.label());
    let mut out = String::from("step");
    for (prefix, label) in [("spread", la), ("spread", lb), ("bits", la), ("bits", lb)] {
        for j in 0..m {
            let _ = write!(out, ",{prefix}_{label}_{j}");
        }
    }
    out.push('\n');
    let steps = a.series.spread.len().min(b.series.spread.len());
    for k in 0..steps {
        let _ = write!(out, "{k}");
        for v in a.series.spread[k].iter().chain(&b.series.spread[k]) {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        for t in [a, b] {
            for bit in t.event_bits(k as u64)? {
                let _ = write!(out, ",{bit}");
            }
        }
        out.push('\n');
    }
    let path = dir.join("compare_series.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    manifest.files.push(ManifestEntry { path, rows: steps });

    let path = dir.join("comparison.json");
    write_json(&report.summary, &path)?;
    manifest.files.push(ManifestEntry { path, rows: 1 });
    Ok(manifest)
}
