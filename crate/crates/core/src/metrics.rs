//! Derived metrics of a run against the centralized optimum.

use serde::{Deserialize, Serialize};

use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::oracle::OptimalAllocation;

/// Per-step scalar series, one entry per step `0..=K`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub spread: Vec<Vec<f64>>,
    pub cost_ratio: Vec<f64>,
    pub average_totals: Vec<Vec<f64>>,
    pub totals: Vec<Vec<f64>>,
    pub cumulative_bits: Vec<Vec<u64>>,
}

/// `|x̄_i^j − x*_i^j|` at one traced step, row-major by device.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub step: u64,
    pub distance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub final_cost_ratio: f64,
    pub final_spread: Vec<f64>,
    pub final_average_totals: Vec<f64>,
    pub distance_median: f64,
    pub distance_max: f64,
    pub event_bits: Vec<u64>,
    pub communication_overhead: u64,
    pub max_total: Vec<f64>,
    pub clamped_low: u64,
    pub clamped_high: u64,
    pub optimal_cost: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub series: MetricSeries,
    pub distances: Vec<DistanceRow>,
    pub summary: Summary,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

pub fn collect_metrics(trace: &Trace, optimum: &OptimalAllocation) -> Result<MetricsReport> {
    let (n, m) = (trace.meta.n, trace.meta.m);
    if optimum.x_star.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: optimum.x_star.len(),
        });
    }
    if let Some(row) = optimum.x_star.iter().find(|r| r.len() != m) {
        return Err(Error::LengthMismatch {
            expected: m,
            got: row.len(),
        });
    }
    let optimal_cost = optimum.total_cost(&trace.costs);
    let x_star: Vec<f64> = optimum.x_star.iter().flatten().copied().collect();

    let steps = trace.meta.steps;
    let cumulative_bits = (0..=steps)
        .map(|k| trace.event_bits(k))
        .collect::<Result<Vec<_>>>()?;
    let series = MetricSeries {
        spread: trace.series.spread.clone(),
        cost_ratio: trace
            .series
            .average_cost
            .iter()
            .map(|c| c / optimal_cost)
            .collect(),
        average_totals: trace.series.average_totals.clone(),
        totals: trace.series.totals.clone(),
        cumulative_bits,
    };

    let distances: Vec<DistanceRow> = trace
        .rows
        .iter()
        .map(|r| DistanceRow {
            step: r.step,
            distance: r.x_bar.iter().zip(&x_star).map(|(a, b)| (a - b).abs()).collect(),
        })
        .collect();
    let final_distance = &distances.last().expect("trace has rows").distance;

    let max_total = (0..m)
        .map(|j| {
            series
                .totals
                .iter()
                .map(|t| t[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let event_bits = series.cumulative_bits.last().cloned().unwrap_or_default();
    let summary = Summary {
        steps,
        final_cost_ratio: *series.cost_ratio.last().expect("nonempty"),
        final_spread: series.spread.last().cloned().unwrap_or_default(),
        final_average_totals: series.average_totals.last().cloned().unwrap_or_default(),
        distance_median: median(final_distance),
        distance_max: final_distance.iter().copied().fold(0.0, f64::max),
        communication_overhead: event_bits.iter().sum(),
        event_bits,
        max_total,
        clamped_low: trace.clamps.low,
        clamped_high: trace.clamps.high,
        optimal_cost,
        wall_time_secs: trace.wall_time_secs,
    };
    Ok(MetricsReport {
        series,
        distances,
        summary,
    })
}
