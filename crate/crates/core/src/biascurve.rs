//! Position-bias curve analysis: entropy, category medians, normalization at
//! position 6 and a one-parameter fit against a reference curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::QueryModel;

/// Reference log-bias curve over positions 1..=10, with `bv[0] = 0` and
/// `bv[5] = -1`.
pub const REFERENCE_CURVE: [f64; 10] = [
    0.0, -0.2952, -0.4935, -0.6792, -0.8673, -1.0000, -1.1100, -1.1939, -1.2284, -1.1818,
];

/// Default cutoff on `exp(-alpha)` between navigational and informational.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

/// Position whose median log-bias is scaled to -1.
pub const NORMALIZATION_POSITION: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("bias value {0} at position {1} is not positive")]
    NonPositive(f64, usize),
    #[error("median log-bias at position 6 is zero; flat curve cannot be normalized")]
    FlatCurve,
    #[error("curve has {0} positions; at least 6 are needed")]
    TooShort(usize),
    #[error("reference curve is zero")]
    ZeroReference,
    #[error("curves have different lengths")]
    LengthMismatch,
    #[error("no curves given")]
    Empty,
}

/// A query's log-bias vector over positions `1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub query_id: String,
    pub log_bias: Vec<f64>,
}

impl BiasVector {
    pub fn bias(&self) -> Vec<f64> {
        self.log_bias.iter().map(|b| b.exp()).collect()
    }
}

/// Shannon entropy (natural log) of `p / sum(p)`.
pub fn entropy(bias: &[f64]) -> Result<f64, CurveError> {
    if let Some((j, &b)) = bias.iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(CurveError::NonPositive(b, j + 1));
    }
    let total: f64 = bias.iter().sum();
    Ok(-bias
        .iter()
        .map(|&b| {
            let q = b / total;
            q * q.ln()
        })
        .sum::<f64>())
}

/// Sorts curves by entropy of their bias (ties by query id) and cuts them into
/// `n_categories` contiguous groups; the first `len % n_categories` groups get
/// one extra member. Returns indices into `curves`, lowest entropy first.
pub fn categorize(curves: &[BiasVector], n_categories: usize) -> Result<Vec<Vec<usize>>, CurveError> {
    let mut keyed = curves
        .iter()
        .enumerate()
        .map(|(i, c)| Ok((entropy(&c.bias())?, i)))
        .collect::<Result<Vec<_>, CurveError>>()?;
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| curves[a.1].query_id.cmp(&curves[b.1].query_id))
    });
    let n = n_categories.max(1);
    let (base, extra) = (keyed.len() / n, keyed.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut it = keyed.into_iter().map(|(_, i)| i);
    for c in 0..n {
        let size = base + (c < extra) as usize;
        out.push(it.by_ref().take(size).collect());
    }
    Ok(out)
}

/// Coordinate-wise median of log-bias curves.
pub fn median_curve(curves: &[&[f64]]) -> Result<Vec<f64>, CurveError> {
    let first = curves.first().ok_or(CurveError::Empty)?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(CurveError::LengthMismatch);
    }
    Ok((0..first.len())
        .map(|j| {
            let mut column: Vec<f64> = curves.iter().map(|c| c[j]).collect();
            column.sort_by(f64::total_cmp);
            let mid = column.len() / 2;
            if column.len() % 2 == 1 {
                column[mid]
            } else {
                (column[mid - 1] + column[mid]) / 2.0
            }
        })
        .collect())
}

/// `-curve / curve[6]`, mapping position 6 to -1.
pub fn normalize_curve(curve: &[f64]) -> Result<Vec<f64>, CurveError> {
    let pivot = *curve
        .get(NORMALIZATION_POSITION - 1)
        .ok_or(CurveError::TooShort(curve.len()))?;
    if pivot == 0.0 {
        return Err(CurveError::FlatCurve);
    }
    Ok(curve.iter().map(|&v| -v / pivot).collect())
}

/// Least-squares scale `alpha` of `reference` against a log-bias curve, plus
/// `exp(-alpha)`, the implied bias at position 6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub exp_neg_alpha: f64,
}

pub fn fit_alpha(log_bias: &[f64], reference: &[f64]) -> Result<AlphaFit, CurveError> {
    if log_bias.len() != reference.len() {
        return Err(CurveError::LengthMismatch);
    }
    let norm: f64 = reference.iter().map(|r| r * r).sum();
    if norm == 0.0 {
        return Err(CurveError::ZeroReference);
    }
    let dot: f64 = reference.iter().zip(log_bias).map(|(r, p)| r * p).sum();
    let alpha = dot / norm;
    Ok(AlphaFit {
        alpha,
        exp_neg_alpha: (-alpha).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Navigational,
    Informational,
}

/// Navigational when `exp(-alpha) < threshold`.
pub fn classify(exp_neg_alpha: f64, threshold: f64) -> Intent {
    if exp_neg_alpha < threshold {
        Intent::Navigational
    } else {
        Intent::Informational
    }
}

/// Median and normalized curves of one entropy category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCurve {
    pub category: usize,
    pub queries: Vec<String>,
    pub median: Vec<f64>,
    /// `None` when the median is flat at position 6.
    pub normalized: Option<Vec<f64>>,
}

/// Categorizes curves by entropy and returns each category's median and
/// normalized curve. Empty categories are skipped.
pub fn category_curves(curves: &[BiasVector], n_categories: usize) -> Result<Vec<CategoryCurve>, CurveError> {
    let groups = categorize(curves, n_categories)?;
    let mut out = Vec::new();
    for (category, members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let slices: Vec<&[f64]> = members.iter().map(|&i| curves[i].log_bias.as_slice()).collect();
        let median = median_curve(&slices)?;
        let normalized = normalize_curve(&median).ok();
        out.push(CategoryCurve {
            category,
            queries: members.iter().map(|&i| curves[i].query_id.clone()).collect(),
            median,
            normalized,
        });
    }
    Ok(out)
}

/// Bias vectors of the models whose anchored component spans positions
/// `1..=n`; other queries are skipped.
pub fn full_coverage_vectors<'a>(models: impl IntoIterator<Item = &'a QueryModel>, n: u32) -> Vec<BiasVector> {
    models
        .into_iter()
        .filter_map(|m| {
            Some(BiasVector {
                query_id: m.query_id.clone(),
                log_bias: m.full_bias_vector(n)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryClass {
    pub query_id: String,
    pub alpha: f64,
    pub exp_neg_alpha: f64,
    pub entropy: f64,
    pub intent: Intent,
}

/// Fits `alpha` against `REFERENCE_CURVE` and labels each vector. Vectors
/// must have the reference's length.
pub fn classify_vectors(vectors: &[BiasVector], threshold: f64) -> Result<Vec<QueryClass>, CurveError> {
    vectors
        .iter()
        .map(|v| {
            let fit = fit_alpha(&v.log_bias, &REFERENCE_CURVE)?;
            Ok(QueryClass {
                query_id: v.query_id.clone(),
                alpha: fit.alpha,
                exp_neg_alpha: fit.exp_neg_alpha,
                entropy: entropy(&v.bias())?,
                intent: classify(fit.exp_neg_alpha, threshold),
            })
        })
        .collect()
}
