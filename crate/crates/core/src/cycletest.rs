//! Alternating cycle sums over per-query bipartite graphs.
//!
//! Under `ln ctr = g(d) + p(j)` every alternating cycle sum vanishes, so the
//! distribution of cycle sums measures how far observed data departs from
//! document-independent position bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteGraph, Cycle};

/// RMS of `|ratio|` for a fixed vector against random sign patterns; shown
/// as a reference line only.
pub const RANDOM_RATIO_REFERENCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CycleError {
    #[error("cycle has zero norm; every edge has ctr 1")]
    ZeroNorm,
}

/// Sum of the edges `(d_i, j_i)` minus the edges `(d_{i+1}, j_i)`.
pub fn cycle_sum(cycle: &Cycle) -> f64 {
    alternating_sum(&cycle.log_ctrs)
}

fn alternating_sum(values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { *v } else { -*v })
        .sum()
}

/// `cycle_sum / ||C||_2` where `C` is the vector of edge log-CTRs.
pub fn cycle_ratio(cycle: &Cycle) -> Result<f64, CycleError> {
    ratio_of(&cycle.log_ctrs)
}

fn ratio_of(values: &[f64]) -> Result<f64, CycleError> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CycleError::ZeroNorm);
    }
    Ok(alternating_sum(values) / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStat {
    pub query_id: String,
    pub length: usize,
    pub sum: f64,
    /// `None` for zero-norm cycles.
    pub ratio: Option<f64>,
}

/// Limits on the cycle search of each graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleCaps {
    pub max_length: usize,
    pub max_count: usize,
}

impl Default for CycleCaps {
    fn default() -> Self {
        Self {
            max_length: 20,
            max_count: 100_000,
        }
    }
}

/// Stats of every cycle of one graph, plus whether the search was truncated.
pub fn graph_cycle_stats<D>(query_id: &str, graph: &BipartiteGraph<D>, caps: CycleCaps) -> (Vec<CycleStat>, bool) {
    let found = graph.enumerate_cycles(caps.max_length, caps.max_count);
    let stats = found
        .cycles
        .iter()
        .map(|c| CycleStat {
            query_id: query_id.to_owned(),
            length: c.len(),
            sum: cycle_sum(c),
            ratio: cycle_ratio(c).ok(),
        })
        .collect();
    (stats, found.truncated)
}

/// Minimum, quartiles and maximum with linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &mut [f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let h = q * (values.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            values[lo] + (h - lo as f64) * (values[hi] - values[lo])
        };
        Some(Self {
            min: values[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: values[values.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub length: usize,
    pub count: usize,
    pub abs_sum: Quartiles,
    /// Over cycles with a defined ratio.
    pub abs_ratio: Option<Quartiles>,
    pub rms_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub lengths: Vec<LengthSummary>,
    pub total_cycles: usize,
    pub queries: usize,
    pub truncated_queries: Vec<String>,
    pub reference_ratio: f64,
    /// Set when no cycle was found at all.
    pub empty: bool,
}

impl HypothesisReport {
    pub fn length(&self, length: usize) -> Option<&LengthSummary> {
        self.lengths.iter().find(|l| l.length == length)
    }
}

/// Per-length distributions of `|sum|` and `|ratio|`.
pub fn summarize(stats: &[CycleStat]) -> Vec<LengthSummary> {
    let mut lengths: Vec<usize> = stats.iter().map(|s| s.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    lengths
        .into_iter()
        .map(|length| {
            let group: Vec<&CycleStat> = stats.iter().filter(|s| s.length == length).collect();
            let mut sums: Vec<f64> = group.iter().map(|s| s.sum.abs()).collect();
            let mut ratios: Vec<f64> = group.iter().filter_map(|s| s.ratio.map(f64::abs)).collect();
            let rms_ratio = (!ratios.is_empty())
                .then(|| (ratios.iter().map(|r| r * r).sum::<f64>() / ratios.len() as f64).sqrt());
            LengthSummary {
                length,
                count: group.len(),
                abs_sum: Quartiles::of(&mut sums).expect("group is non-empty"),
                abs_ratio: Quartiles::of(&mut ratios),
                rms_ratio,
            }
        })
        .collect()
}

/// Enumerates cycles of every graph in parallel and summarizes them by
/// length. Also returns the individual stats in input order.
pub fn hypothesis_report<D: Sync>(
    graphs: &[(String, BipartiteGraph<D>)],
    caps: CycleCaps,
) -> (HypothesisReport, Vec<CycleStat>) {
    let per_graph: Vec<(Vec<CycleStat>, bool)> = graphs
        .par_iter()
        .map(|(q, g)| graph_cycle_stats(q, g, caps))
        .collect();
    let truncated_queries = graphs
        .iter()
        .zip(&per_graph)
        .filter(|(_, (_, t))| *t)
        .map(|((q, _), _)| q.clone())
        .collect();
    let stats: Vec<CycleStat> = per_graph.into_iter().flat_map(|(s, _)| s).collect();
    let report = HypothesisReport {
        lengths: summarize(&stats),
        total_cycles: stats.len(),
        queries: graphs.len(),
        truncated_queries,
        reference_ratio: RANDOM_RATIO_REFERENCE,
        empty: stats.is_empty(),
    };
    (report, stats)
}
