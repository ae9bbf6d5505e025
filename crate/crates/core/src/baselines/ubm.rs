//! User browsing model fitted by expectation-maximization.
//!
//! A click at position `j` happens with probability `g(q, d_j) * gamma(j, r)`,
//! where `r` is the position of the last click above `j` (0 when there was
//! none). The examination event is latent: a clicked impression was examined,
//! an unclicked one was examined with posterior
//! `gamma (1 - g) / (1 - gamma g)`.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicklog::SessionLog;
use crate::solver::Uncovered;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UbmError {
    #[error("no sessions to fit")]
    EmptyLog,
}

/// `(query, doc, position)` cells excluded from the sufficient statistics.
pub type HeldOut = HashSet<(String, String, u32)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UbmOptions {
    pub max_iters: usize,
    /// Stop once no parameter moves by more than this.
    pub tol: f64,
}

impl Default for UbmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

const PRIOR: f64 = 0.5;
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct UbmModel {
    pub n_positions: usize,
    /// Attractiveness per `(query, doc)`.
    pub goodness: BTreeMap<(String, String), f64>,
    /// `gamma[j - 1][r]` for positions `j = 1..=n` and last-click `r < j`.
    pub gamma: Vec<Vec<f64>>,
    /// False for cells with no observations; those keep the 0.5 prior.
    pub gamma_observed: Vec<Vec<bool>>,
    pub iterations: usize,
    pub converged: bool,
    /// Session log-likelihood before every M-step, then at the final
    /// parameters.
    pub log_likelihood: Vec<f64>,
}

impl UbmModel {
    pub fn gamma_at(&self, position: usize, last_click: usize) -> f64 {
        self.gamma[position - 1][last_click]
    }
}

/// One observed impression, aggregated over identical sessions.
#[derive(Debug, Clone, Copy)]
struct Obs {
    param: u32,
    cell: u32,
    click: bool,
    count: f64,
}

fn cell_index(position: usize, last_click: usize) -> usize {
    position * (position - 1) / 2 + last_click
}

#[derive(Default)]
struct Stats {
    g_num: Vec<f64>,
    g_den: Vec<f64>,
    cell_num: Vec<f64>,
    cell_den: Vec<f64>,
    log_likelihood: f64,
}

impl Stats {
    fn zeros(params: usize, cells: usize) -> Self {
        Self {
            g_num: vec![0.0; params],
            g_den: vec![0.0; params],
            cell_num: vec![0.0; cells],
            cell_den: vec![0.0; cells],
            log_likelihood: 0.0,
        }
    }

    fn add(&mut self, other: &Stats) {
        let pairs = [
            (&mut self.g_num, &other.g_num),
            (&mut self.g_den, &other.g_den),
            (&mut self.cell_num, &other.cell_num),
            (&mut self.cell_den, &other.cell_den),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.log_likelihood += other.log_likelihood;
    }
}

fn e_step(obs: &[Obs], g: &[f64], gamma: &[f64]) -> Stats {
    // Fixed chunking and an in-order fold keep the sums independent of the
    // thread count.
    let partials: Vec<Stats> = obs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = Stats::zeros(g.len(), gamma.len());
            for o in chunk {
                let (p, c) = (o.param as usize, o.cell as usize);
                let attract = g[p];
                let exam = gamma[c];
                let click_prob = attract * exam;
                s.cell_den[c] += o.count;
                if o.click {
                    s.g_num[p] += o.count;
                    s.g_den[p] += o.count;
                    s.cell_num[c] += o.count;
                    s.log_likelihood += o.count * click_prob.max(f64::MIN_POSITIVE).ln();
                } else {
                    let skip = 1.0 - click_prob;
                    let examined = if skip > 0.0 {
                        exam * (1.0 - attract) / skip
                    } else {
                        0.0
                    };
                    s.g_den[p] += o.count * examined;
                    s.cell_num[c] += o.count * examined;
                    s.log_likelihood += o.count * skip.max(f64::MIN_POSITIVE).ln();
                }
            }
            s
        })
        .collect();
    let mut total = Stats::zeros(g.len(), gamma.len());
    for p in &partials {
        total.add(p);
    }
    total
}

/// Fits the model to all sessions, skipping impressions listed in `held_out`
/// (their clicks still count as history for later positions).
pub fn fit_ubm(
    log: &SessionLog,
    options: &UbmOptions,
    held_out: Option<&HeldOut>,
) -> Result<UbmModel, UbmError> {
    if log.is_empty() {
        return Err(UbmError::EmptyLog);
    }
    let n = log.iter().map(|s| s.docs.len()).max().unwrap_or(0);

    // identical sessions collapse to one weighted pattern
    let mut patterns: HashMap<(u32, &[u32], &[bool]), u64> = HashMap::new();
    for s in log.iter() {
        *patterns.entry((s.query, s.docs, s.clicks)).or_default() += 1;
    }
    let mut patterns: Vec<_> = patterns.into_iter().collect();
    patterns.sort_unstable();

    let mut id_pairs: Vec<(u32, u32)> = patterns
        .iter()
        .flat_map(|((q, docs, _), _)| docs.iter().map(move |&d| (*q, d)))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    id_pairs.sort_unstable_by(|a, b| {
        (log.query_name(a.0), log.doc_name(a.1)).cmp(&(log.query_name(b.0), log.doc_name(b.1)))
    });
    let param_of: HashMap<(u32, u32), u32> = id_pairs
        .iter()
        .enumerate()
        .map(|(i, &key)| (key, i as u32))
        .collect();
    let pairs: Vec<(String, String)> = id_pairs
        .iter()
        .map(|&(q, d)| (log.query_name(q).to_owned(), log.doc_name(d).to_owned()))
        .collect();

    let masked: HashSet<(u32, u32, u32)> = held_out
        .into_iter()
        .flatten()
        .filter_map(|(q, d, j)| {
            Some((log.query_interner().get(q)?, log.doc_interner().get(d)?, *j))
        })
        .collect();
    let mut obs = Vec::new();
    for ((q, docs, clicks), count) in &patterns {
        let mut last = 0;
        for (k, (&d, &click)) in docs.iter().zip(clicks.iter()).enumerate() {
            let position = k + 1;
            if !masked.contains(&(*q, d, position as u32)) {
                obs.push(Obs {
                    param: param_of[&(*q, d)],
                    cell: cell_index(position, last) as u32,
                    click,
                    count: *count as f64,
                });
            }
            if click {
                last = position;
            }
        }
    }

    // the E-step only sees (param, cell, click), so merge on that key
    obs.sort_unstable_by_key(|o| (o.param, o.cell, o.click));
    obs.dedup_by(|next, kept| {
        let same = (next.param, next.cell, next.click) == (kept.param, kept.cell, kept.click);
        if same {
            kept.count += next.count;
        }
        same
    });

    let cells = n * (n + 1) / 2;
    let mut g = vec![PRIOR; pairs.len()];
    let mut gamma = vec![PRIOR; cells];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut observed = vec![false; cells];
    while iterations < options.max_iters {
        let stats = e_step(&obs, &g, &gamma);
        trace.push(stats.log_likelihood);
        let mut change: f64 = 0.0;
        for (p, value) in g.iter_mut().enumerate() {
            if stats.g_den[p] > 0.0 {
                let next = (stats.g_num[p] / stats.g_den[p]).min(1.0);
                change = change.max((next - *value).abs());
                *value = next;
            }
        }
        for (c, value) in gamma.iter_mut().enumerate() {
            if stats.cell_den[c] > 0.0 {
                observed[c] = true;
                let next = (stats.cell_num[c] / stats.cell_den[c]).min(1.0);
                change = change.max((next - *value).abs());
                *value = next;
            }
        }
        iterations += 1;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    trace.push(e_step(&obs, &g, &gamma).log_likelihood);

    let unflatten = |flat: &[f64]| -> Vec<Vec<f64>> {
        (1..=n)
            .map(|j| (0..j).map(|r| flat[cell_index(j, r)]).collect())
            .collect()
    };
    let gamma_observed = (1..=n)
        .map(|j| (0..j).map(|r| observed[cell_index(j, r)]).collect())
        .collect();
    for j in 1..=n {
        for r in 0..j {
            if !observed[cell_index(j, r)] {
                log::debug!("gamma({j}, {r}) has no observations; kept at prior");
            }
        }
    }
    Ok(UbmModel {
        n_positions: n,
        goodness: pairs.into_iter().zip(g).collect(),
        gamma: unflatten(&gamma),
        gamma_observed,
        iterations,
        converged,
        log_likelihood: trace,
    })
}

/// Marginal click probability at every position of a ranking, by a forward
/// pass over the distribution of the last-click position.
///
/// `goodness[k]` belongs to the document at position `k + 1`;
/// `gamma[j - 1][r]` is the examination probability at `j` after a last click
/// at `r`.
pub fn ubm_click_probabilities(goodness: &[f64], gamma: &[Vec<f64>]) -> Vec<f64> {
    let n = goodness.len();
    assert!(gamma.len() >= n, "gamma table shorter than the ranking");
    let mut state = vec![0.0; n + 1];
    state[0] = 1.0;
    let mut marginals = Vec::with_capacity(n);
    for j in 1..=n {
        let mut clicked = 0.0;
        for r in 0..j {
            let p = gamma[j - 1][r] * goodness[j - 1];
            let mass = state[r] * p;
            clicked += mass;
            state[r] -= mass;
        }
        state[j] = clicked;
        marginals.push(clicked);
    }
    marginals
}

/// Per-position click probabilities for a ranked list under a fitted model.
pub fn predict_ubm(model: &UbmModel, query: &str, ranked_docs: &[&str]) -> Result<Vec<f64>, Uncovered> {
    if ranked_docs.len() > model.n_positions {
        return Err(Uncovered::Position(ranked_docs.len() as u32));
    }
    let goodness = ranked_docs
        .iter()
        .map(|&d| {
            model
                .goodness
                .get(&(query.to_owned(), d.to_owned()))
                .copied()
                .ok_or_else(|| Uncovered::Doc(d.to_owned()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ubm_click_probabilities(&goodness, &model.gamma))
}

/// Expected click-through rate of each `(query, doc, position)` seen in the
/// log: the model's click probability averaged over the sessions that showed
/// the document there.
pub fn ubm_triple_marginals(model: &UbmModel, log: &SessionLog) -> BTreeMap<(String, String, u32), f64> {
    let mut rankings: HashMap<(u32, &[u32]), u64> = HashMap::new();
    for s in log.iter() {
        *rankings.entry((s.query, s.docs)).or_default() += 1;
    }
    let mut rankings: Vec<_> = rankings.into_iter().collect();
    rankings.sort_unstable();
    let mut sums: BTreeMap<(String, String, u32), (f64, f64)> = BTreeMap::new();
    for ((q, docs), count) in rankings {
        let query = log.query_name(q);
        let names: Vec<&str> = docs.iter().map(|&d| log.doc_name(d)).collect();
        let Ok(probs) = predict_ubm(model, query, &names) else {
            continue;
        };
        for (k, (doc, p)) in names.iter().zip(probs).enumerate() {
            let e = sums
                .entry((query.to_owned(), (*doc).to_owned(), k as u32 + 1))
                .or_default();
            e.0 += count as f64 * p;
            e.1 += count as f64;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n)).collect()
}
