//! Scoring predicted click-through rates against held-out observations, and
//! ranking metrics for judged result lists.
//!
//! Perplexity follows the click-only form
//! `2^(-(1/|U|) * sum c * log2(c_pred))`; it ignores the skip term of the
//! usual two-sided click perplexity, so it is not minimized by the true rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicklog::{Triple, TripleTable};
use crate::solver::Uncovered;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("observed click-through rate must be positive, got {0}")]
    NonPositiveObserved(f64),
    #[error("no errors to summarize")]
    Empty,
    #[error("threshold grid is not sorted ascending")]
    UnsortedGrid,
}

/// Floor applied to zero predictions inside the perplexity logarithm.
pub const PREDICTION_FLOOR: f64 = 1e-9;

/// `|observed - predicted| / observed`.
pub fn relative_error(observed: f64, predicted: f64) -> Result<f64, EvalError> {
    if observed <= 0.0 || observed.is_nan() {
        return Err(EvalError::NonPositiveObserved(observed));
    }
    Ok((observed - predicted).abs() / observed)
}

/// `(predicted - observed) / observed`; negative means under-prediction.
pub fn signed_error(observed: f64, predicted: f64) -> Result<f64, EvalError> {
    if observed <= 0.0 || observed.is_nan() {
        return Err(EvalError::NonPositiveObserved(observed));
    }
    Ok((predicted - observed) / observed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Fraction of `errors` at or below each threshold of an ascending grid.
pub fn error_cdf(errors: &[f64], grid: &[f64]) -> Result<Vec<CdfPoint>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedGrid);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| CdfPoint {
            threshold: t,
            fraction: sorted.partition_point(|&e| e <= t) as f64 / n,
        })
        .collect())
}

/// Default grid: 0 to 2 in steps of 0.05.
pub fn default_cdf_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.05).collect()
}

/// Click-only perplexity of `(observed, predicted)` pairs, base 2. Returns the
/// value and how many predictions were raised to [`PREDICTION_FLOOR`].
pub fn perplexity(pairs: &[(f64, f64)]) -> (f64, usize) {
    if pairs.is_empty() {
        return (1.0, 0);
    }
    let mut clamped = 0;
    let total: f64 = pairs
        .iter()
        .map(|&(c, pred)| {
            let pred = if pred < PREDICTION_FLOOR {
                clamped += 1;
                PREDICTION_FLOOR
            } else {
                pred
            };
            c * pred.log2()
        })
        .sum();
    (2f64.powf(-total / pairs.len() as f64), clamped)
}

/// One scored test triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub doc_id: String,
    pub position: u32,
    pub frequency: u64,
    pub observed: f64,
    pub predicted: f64,
    pub relative_error: f64,
    pub signed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_relative_error: f64,
    /// Mean magnitude of negative signed errors.
    pub mean_under_prediction: f64,
    pub under_count: usize,
    /// Mean of positive signed errors.
    pub mean_over_prediction: f64,
    pub over_count: usize,
    pub perplexity: f64,
    pub clamped_predictions: usize,
}

impl EvalSummary {
    pub fn of(records: &[EvalRecord]) -> Self {
        let n = records.len();
        let mean = |xs: &mut dyn Iterator<Item = f64>, k: usize| {
            if k == 0 {
                0.0
            } else {
                xs.sum::<f64>() / k as f64
            }
        };
        let under: Vec<f64> = records
            .iter()
            .filter(|r| r.signed_error < 0.0)
            .map(|r| -r.signed_error)
            .collect();
        let over: Vec<f64> = records
            .iter()
            .filter(|r| r.signed_error > 0.0)
            .map(|r| r.signed_error)
            .collect();
        let pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.observed, r.predicted)).collect();
        let (perplexity, clamped_predictions) = perplexity(&pairs);
        Self {
            count: n,
            mean_relative_error: mean(&mut records.iter().map(|r| r.relative_error), n),
            mean_under_prediction: mean(&mut under.iter().copied(), under.len()),
            under_count: under.len(),
            mean_over_prediction: mean(&mut over.iter().copied(), over.len()),
            over_count: over.len(),
            perplexity,
            clamped_predictions,
        }
    }
}

/// Per-triple records of a test set plus the triples the model could not
/// cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub uncovered: usize,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn relative_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.relative_error).collect()
    }
}

/// Scores `predict` on every triple of `test`. Triples the predictor reports
/// as uncovered, and any with a zero observed rate, are counted and skipped.
pub fn evaluate<F>(test: &TripleTable, mut predict: F) -> EvalReport
where
    F: FnMut(&Triple) -> Result<f64, Uncovered>,
{
    let mut records = Vec::new();
    let mut uncovered = 0;
    for (_, entry) in test.iter() {
        for t in &entry.triples {
            let observed = t.ctr();
            let Ok(predicted) = predict(t) else {
                uncovered += 1;
                continue;
            };
            let (Ok(rel), Ok(signed)) = (
                relative_error(observed, predicted),
                signed_error(observed, predicted),
            ) else {
                uncovered += 1;
                continue;
            };
            records.push(EvalRecord {
                query_id: t.query_id.clone(),
                doc_id: t.doc_id.clone(),
                position: t.position,
                frequency: entry.frequency,
                observed,
                predicted,
                relative_error: rel,
                signed_error: signed,
            });
        }
    }
    let summary = EvalSummary::of(&records);
    EvalReport {
        records,
        uncovered,
        summary,
    }
}

/// How test records are grouped.
#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    Position,
    /// Upper-inclusive bucket edges on query frequency; a final open bucket
    /// holds everything above the last edge.
    Frequency(Vec<u64>),
}

/// Frequency buckets of width 5000 up to 50000.
pub fn default_frequency_edges() -> Vec<u64> {
    (1..=10).map(|k| k * 5000).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub summary: EvalSummary,
}

/// Aggregates per group, in ascending group order; empty groups are omitted.
pub fn group_eval(report: &EvalReport, grouping: &Grouping) -> Vec<GroupSummary> {
    let key_of = |r: &EvalRecord| -> u64 {
        match grouping {
            Grouping::Position => r.position as u64,
            Grouping::Frequency(edges) => edges.partition_point(|&e| e < r.frequency) as u64,
        }
    };
    let mut groups: std::collections::BTreeMap<u64, Vec<EvalRecord>> = Default::default();
    for r in &report.records {
        groups.entry(key_of(r)).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(key, records)| GroupSummary {
            label: match grouping {
                Grouping::Position => key.to_string(),
                Grouping::Frequency(edges) => bucket_label(edges, key as usize),
            },
            summary: EvalSummary::of(&records),
        })
        .collect()
}

fn bucket_label(edges: &[u64], bucket: usize) -> String {
    match (bucket.checked_sub(1).map(|b| edges[b]), edges.get(bucket)) {
        (None, Some(hi)) => format!("<={hi}"),
        (Some(lo), Some(hi)) => format!("{}-{hi}", lo + 1),
        (Some(lo), None) => format!(">{lo}"),
        (None, None) => "all".to_owned(),
    }
}

/// NDCG@k with gain `2^r - 1` and discount `log2(1 + rank)`. Zero when the
/// ideal DCG is zero.
pub fn ndcg_at_k(ratings: &[u8], k: usize) -> f64 {
    let dcg = |rs: &[u8]| -> f64 {
        rs.iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = ratings.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg(ratings) / best
    }
}

/// Reciprocal rank of the first relevant document within the top `k`.
pub fn mrr_at_k(relevant: &[bool], k: usize) -> f64 {
    relevant
        .iter()
        .take(k)
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    /// `sum(rel_i / i) / sum(rel_i)` over the top `k`.
    #[default]
    ReciprocalRank,
    /// Standard average precision: mean of precision@i over relevant ranks.
    Standard,
}

pub fn map_at_k(relevant: &[bool], k: usize, mode: MapMode) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, _) in relevant.iter().take(k).enumerate().filter(|(_, &r)| r) {
        hits += 1;
        total += match mode {
            MapMode::ReciprocalRank => 1.0 / (i + 1) as f64,
            MapMode::Standard => hits as f64 / (i + 1) as f64,
        };
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}
