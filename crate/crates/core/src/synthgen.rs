//! Synthetic ground truth and click-session simulation under the QSEH, EH,
//! cascade, DCM and UBM click models.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::ubm_click_probabilities;
use crate::biascurve::REFERENCE_CURVE;
use crate::clicklog::{QueryTriples, SessionLog, Triple, TripleTable};

/// Impression count attached to exact click-probability triples.
pub const NOMINAL_IMPRESSIONS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{docs} documents per query cannot fill {positions} positions")]
    TooFewDocs { docs: usize, positions: usize },
    #[error("shared pool of {pool} documents is smaller than {docs} documents per query")]
    PoolTooSmall { pool: usize, docs: usize },
    #[error("reference bias curve covers 10 positions, {0} requested")]
    TooManyPositions(usize),
    #[error("at least one position is required")]
    NoPositions,
    #[error("invalid range [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("unknown model kind '{0}'")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qseh,
    Eh,
    Cascade,
    Dcm,
    Ubm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Qseh => "qseh",
            ModelKind::Eh => "eh",
            ModelKind::Cascade => "cascade",
            ModelKind::Dcm => "dcm",
            ModelKind::Ubm => "ubm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qseh" => Ok(ModelKind::Qseh),
            "eh" => Ok(ModelKind::Eh),
            "cascade" => Ok(ModelKind::Cascade),
            "dcm" => Ok(ModelKind::Dcm),
            "ubm" => Ok(ModelKind::Ubm),
            _ => Err(SynthError::UnknownKind(s.to_owned())),
        }
    }
}

/// How the log position bias `alpha * bv` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BiasFamily {
    /// `alpha` drawn uniformly per query.
    ScaledReference { alpha_min: f64, alpha_max: f64 },
    /// One `alpha` shared by every query.
    Global { alpha: f64 },
}

/// Ranking shown in each session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationPolicy {
    /// Uniform random cyclic shift of the document pool per session.
    RandomCyclic,
    /// Always the first `n_positions` documents in pool order.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub n_positions: usize,
    pub kind: ModelKind,
    pub bias: BiasFamily,
    /// Goodness is uniform on this range.
    pub goodness_range: (f64, f64),
    /// Draw each query's documents from a pool of this size shared by all
    /// queries, instead of private documents.
    pub shared_pool: Option<usize>,
    pub rotation: RotationPolicy,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_queries: 100,
            docs_per_query: 15,
            n_positions: 10,
            kind: ModelKind::Qseh,
            bias: BiasFamily::ScaledReference {
                alpha_min: 0.3,
                alpha_max: 3.0,
            },
            goodness_range: (0.05, 0.95),
            shared_pool: None,
            rotation: RotationPolicy::RandomCyclic,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query_id: String,
    /// Document pool in rotation order.
    pub docs: Vec<String>,
    pub goodness: Vec<f64>,
    pub alpha: f64,
    /// `ln p(j)` for positions `1..=n`, with `ln p(1) = 0`.
    pub log_bias: Vec<f64>,
}

impl QueryTruth {
    pub fn bias(&self, position: u32) -> f64 {
        self.log_bias[position as usize - 1].exp()
    }

    pub fn goodness_of(&self, doc: &str) -> Option<f64> {
        self.docs.iter().position(|d| d == doc).map(|i| self.goodness[i])
    }

    /// Pool indices of the ranking shown with cyclic shift `shift`.
    pub fn ranking(&self, shift: usize, n_positions: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.docs.len();
        (0..n_positions).map(move |k| (shift + k) % m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GenConfig,
    pub queries: Vec<QueryTruth>,
    /// Post-click examination probability `gamma(j)` of the DCM.
    pub dcm_gamma: Vec<f64>,
    /// UBM examination `gamma[j-1][r]`, `r` the last clicked position (0 for
    /// none).
    pub ubm_gamma: Vec<Vec<f64>>,
}

fn check_range(lo: f64, hi: f64) -> Result<(), SynthError> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(SynthError::BadRange(lo, hi))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws every generative parameter from `config.seed`.
pub fn gen_ground_truth(config: &GenConfig) -> Result<GroundTruth, SynthError> {
    let n = config.n_positions;
    let m = config.docs_per_query;
    if n == 0 {
        return Err(SynthError::NoPositions);
    }
    if n > REFERENCE_CURVE.len() {
        return Err(SynthError::TooManyPositions(n));
    }
    if m < n {
        return Err(SynthError::TooFewDocs { docs: m, positions: n });
    }
    if let Some(pool) = config.shared_pool {
        if pool < m {
            return Err(SynthError::PoolTooSmall { pool, docs: m });
        }
    }
    let (g_lo, g_hi) = config.goodness_range;
    check_range(g_lo, g_hi)?;
    if !(g_lo > 0.0 && g_hi <= 1.0) {
        return Err(SynthError::BadRange(g_lo, g_hi));
    }
    if let BiasFamily::ScaledReference { alpha_min, alpha_max } = config.bias {
        check_range(alpha_min, alpha_max)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dcm_gamma = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
    let ubm_gamma = (1..=n)
        .map(|j| (0..j).map(|_| rng.random_range(0.1..1.0)).collect())
        .collect();
    let width = config.n_queries.max(1).to_string().len().max(4);
    let queries = (0..config.n_queries)
        .map(|i| {
            let alpha = match config.bias {
                BiasFamily::ScaledReference { alpha_min, alpha_max } => uniform(&mut rng, alpha_min, alpha_max),
                BiasFamily::Global { alpha } => alpha,
            };
            let docs = match config.shared_pool {
                Some(pool) => {
                    let w = pool.to_string().len().max(4);
                    sample(&mut rng, pool, m)
                        .into_iter()
                        .map(|k| format!("d{k:0w$}"))
                        .collect()
                }
                None => (0..m).map(|k| format!("q{i:0width$}-d{k:02}")).collect(),
            };
            QueryTruth {
                query_id: format!("q{i:0width$}"),
                docs,
                goodness: (0..m).map(|_| uniform(&mut rng, g_lo, g_hi)).collect(),
                alpha,
                log_bias: REFERENCE_CURVE[..n].iter().map(|b| alpha * b).collect(),
            }
        })
        .collect();
    Ok(GroundTruth {
        config: config.clone(),
        queries,
        dcm_gamma,
        ubm_gamma,
    })
}

/// Samples the clicks of one session on `ranking`.
fn click_sequence(truth: &GroundTruth, q: &QueryTruth, ranking: &[usize], rng: &mut ChaCha8Rng, clicks: &mut Vec<bool>) {
    let g = |k: usize| q.goodness[ranking[k]];
    clicks.clear();
    match truth.config.kind {
        ModelKind::Qseh | ModelKind::Eh => {
            for k in 0..ranking.len() {
                let p = g(k) * q.log_bias[k].exp();
                clicks.push(rng.random_bool(p.min(1.0)));
            }
        }
        ModelKind::Cascade => {
            let mut done = false;
            for k in 0..ranking.len() {
                let c = !done && rng.random_bool(g(k));
                done |= c;
                clicks.push(c);
            }
        }
        ModelKind::Dcm => {
            let mut prev = false;
            for k in 0..ranking.len() {
                let p = if prev { g(k) * truth.dcm_gamma[k] } else { g(k) };
                prev = rng.random_bool(p);
                clicks.push(prev);
            }
        }
        ModelKind::Ubm => {
            let mut last = 0;
            for k in 0..ranking.len() {
                let c = rng.random_bool(g(k) * truth.ubm_gamma[k][last]);
                if c {
                    last = k + 1;
                }
                clicks.push(c);
            }
        }
    }
}

fn query_rng(seed: u64, query: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query as u64);
    rng
}

/// Simulates `sessions_per_query` sessions for every query. Queries are
/// simulated in parallel, each with its own stream of `seed`; the log lists
/// queries in truth order.
pub fn simulate_sessions(truth: &GroundTruth, sessions_per_query: usize, seed: u64) -> SessionLog {
    let n = truth.config.n_positions;
    let per_query: Vec<(Vec<u32>, Vec<bool>)> = truth
        .queries
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut rng = query_rng(seed, qi);
            let m = q.docs.len();
            let mut ranks = Vec::with_capacity(sessions_per_query * n);
            let mut all_clicks = Vec::with_capacity(sessions_per_query * n);
            let mut ranking = Vec::with_capacity(n);
            let mut clicks = Vec::with_capacity(n);
            for _ in 0..sessions_per_query {
                let shift = match truth.config.rotation {
                    RotationPolicy::RandomCyclic => rng.random_range(0..m),
                    RotationPolicy::Fixed => 0,
                };
                ranking.clear();
                ranking.extend(q.ranking(shift, n));
                click_sequence(truth, q, &ranking, &mut rng, &mut clicks);
                ranks.extend(ranking.iter().map(|&k| k as u32));
                all_clicks.extend_from_slice(&clicks);
            }
            (ranks, all_clicks)
        })
        .collect();

    let mut log = SessionLog::new();
    for (q, (ranks, clicks)) in truth.queries.iter().zip(per_query) {
        let qid = log.intern_query(&q.query_id);
        let ids: Vec<u32> = q.docs.iter().map(|d| log.intern_doc(d)).collect();
        let mut docs = Vec::with_capacity(n);
        for (r, c) in ranks.chunks(n).zip(clicks.chunks(n)) {
            docs.clear();
            docs.extend(r.iter().map(|&k| ids[k as usize]));
            log.push_interned(qid, &docs, c);
        }
    }
    log
}

/// Marginal click probability at each position of `ranking` (pool indices).
pub fn exact_marginals(truth: &GroundTruth, q: &QueryTruth, ranking: &[usize]) -> Vec<f64> {
    let g: Vec<f64> = ranking.iter().map(|&k| q.goodness[k]).collect();
    match truth.config.kind {
        ModelKind::Qseh | ModelKind::Eh => g
            .iter()
            .zip(&q.log_bias)
            .map(|(g, b)| (g * b.exp()).min(1.0))
            .collect(),
        ModelKind::Cascade => {
            let mut unclicked = 1.0;
            g.iter()
                .map(|&gk| {
                    let c = unclicked * gk;
                    unclicked *= 1.0 - gk;
                    c
                })
                .collect()
        }
        ModelKind::Dcm => {
            let mut prev = 0.0;
            g.iter()
                .enumerate()
                .map(|(k, &gk)| {
                    prev = prev * gk * truth.dcm_gamma[k] + (1.0 - prev) * gk;
                    prev
                })
                .collect()
        }
        ModelKind::Ubm => ubm_click_probabilities(&g, &truth.ubm_gamma),
    }
}

/// Triples whose ctr is the exact marginal click probability of each
/// `(doc, position)` pair reachable under the rotation policy.
pub fn exact_ctr_table(truth: &GroundTruth) -> TripleTable {
    let n = truth.config.n_positions;
    let mut table = TripleTable::new();
    for q in &truth.queries {
        let m = q.docs.len();
        let shifts: Vec<usize> = match truth.config.rotation {
            RotationPolicy::RandomCyclic => (0..m).collect(),
            RotationPolicy::Fixed => vec![0],
        };
        let mut triples = Vec::with_capacity(shifts.len() * n);
        for shift in shifts {
            let ranking: Vec<usize> = q.ranking(shift, n).collect();
            for (j, (&k, ctr)) in ranking.iter().zip(exact_marginals(truth, q, &ranking)).enumerate() {
                triples.push(Triple::with_ctr(
                    q.query_id.clone(),
                    q.docs[k].clone(),
                    j as u32 + 1,
                    NOMINAL_IMPRESSIONS,
                    ctr,
                ));
            }
        }
        table.insert_query(
            q.query_id.clone(),
            QueryTriples {
                triples,
                frequency: NOMINAL_IMPRESSIONS,
            },
        );
    }
    table
}
