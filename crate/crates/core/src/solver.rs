//! Query-specific examination model fit.
//!
//! For one query every edge `(d, j)` of the bipartite graph gives the equation
//! `g_d + p_j = c_dj` in the log domain, with `p_1 = 0`. Each connected
//! component is solved by least squares with its anchor position pinned to 0;
//! components that do not contain position 1 are then shifted so that their
//! mean log-goodness matches the anchored component.
//!
//! The normal equations have a diagonal document block, so documents are
//! eliminated first and only a small dense system over positions is factored.

pub mod dense;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicklog::{Triple, TripleTable};
use crate::graph::{build_graph, BipartiteGraph, ComponentPartition, GraphError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("no triples to fit")]
    EmptyInput,
    #[error("component {0} has no edges")]
    EmptyComponent(usize),
    #[error("normal system of component {0} is not positive definite")]
    Singular(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Requested document or position is not covered by a fitted model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Uncovered {
    #[error("query {0:?} has no model")]
    Query(String),
    #[error("document {0:?} is not in the model")]
    Doc(String),
    #[error("position {0} is not in the model")]
    Position(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Every equation counts once.
    #[default]
    Unweighted,
    /// Equation `(d, j)` is scaled by `sqrt(impressions)`.
    Impressions,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: Weighting,
}

/// Least-squares solution of one connected component, indexed into the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentFit {
    pub component: usize,
    pub anchor: usize,
    pub log_goodness: Vec<(usize, f64)>,
    pub log_bias: Vec<(usize, f64)>,
}

impl ComponentFit {
    fn mean_log_goodness(&self) -> f64 {
        let n = self.log_goodness.len() as f64;
        self.log_goodness.iter().map(|&(_, g)| g).sum::<f64>() / n
    }
}

/// Solves one connected component with `p[anchor] = 0`.
///
/// `docs` and `positions` are the component's node indices; `anchor` must be
/// one of `positions`.
pub fn fit_component<D>(
    graph: &BipartiteGraph<D>,
    component: usize,
    docs: &[usize],
    positions: &[usize],
    anchor: usize,
    options: &FitOptions,
) -> Result<ComponentFit, SolverError> {
    if docs.is_empty() || positions.is_empty() {
        return Err(SolverError::EmptyComponent(component));
    }
    debug_assert!(positions.contains(&anchor));
    let edges = graph.edges();
    let weight = |e: usize| match options.weighting {
        Weighting::Unweighted => 1.0,
        Weighting::Impressions => edges[e].impressions.max(1.0),
    };

    // Unknown slot of each free position; the anchor has none.
    let free: Vec<usize> = positions.iter().copied().filter(|&p| p != anchor).collect();
    let mut slot = BTreeMap::new();
    for (k, &p) in free.iter().enumerate() {
        slot.insert(p, k);
    }
    let k = free.len();

    // Schur complement S = D_p - B' D_g^{-1} B and rhs r_p - B' D_g^{-1} r_g.
    let mut schur = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for &p in &free {
        let i = slot[&p];
        for &e in graph.position_edges(p) {
            schur[(i, i)] += weight(e);
            rhs[i] += weight(e) * edges[e].log_ctr;
        }
    }
    let mut doc_weight = Vec::with_capacity(docs.len());
    let mut doc_rhs = Vec::with_capacity(docs.len());
    for &d in docs {
        let incident = graph.doc_edges(d);
        let w_total: f64 = incident.iter().map(|&e| weight(e)).sum();
        let r_total: f64 = incident.iter().map(|&e| weight(e) * edges[e].log_ctr).sum();
        doc_weight.push(w_total);
        doc_rhs.push(r_total);
        for &e1 in incident {
            let Some(&i) = slot.get(&edges[e1].pos) else {
                continue;
            };
            rhs[i] -= weight(e1) * r_total / w_total;
            for &e2 in incident {
                if let Some(&j) = slot.get(&edges[e2].pos) {
                    schur[(i, j)] -= weight(e1) * weight(e2) / w_total;
                }
            }
        }
    }
    let bias_free = if k == 0 {
        DVector::zeros(0)
    } else {
        schur
            .cholesky()
            .ok_or(SolverError::Singular(component))?
            .solve(&rhs)
    };
    let bias_of = |p: usize| slot.get(&p).map_or(0.0, |&i| bias_free[i]);

    let log_goodness = docs
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            let shifted: f64 = graph
                .doc_edges(d)
                .iter()
                .map(|&e| weight(e) * bias_of(edges[e].pos))
                .sum();
            (d, (doc_rhs[n] - shifted) / doc_weight[n])
        })
        .collect();
    let log_bias = positions.iter().map(|&p| (p, bias_of(p))).collect();
    Ok(ComponentFit {
        component,
        anchor,
        log_goodness,
        log_bias,
    })
}

/// Fit of a whole graph after alignment, indexed like the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFit {
    pub log_goodness: Vec<f64>,
    pub log_bias: Vec<f64>,
    pub partition: ComponentPartition,
    /// Mean log-goodness every component was aligned to.
    pub mu: f64,
    /// Root-mean-square of `g_d + p_j - c_dj` over all edges.
    pub residual: f64,
}

/// Merges per-component fits into one gauge.
///
/// The anchored component is left as is and `mu` is its mean log-goodness.
/// Every other component is shifted by `a = mu - mean(g)`, i.e. `g += a`,
/// `p -= a`, which leaves its own equations untouched. Without an anchored
/// component `mu` is the mean of the component means.
pub fn align_components<D>(
    graph: &BipartiteGraph<D>,
    partition: &ComponentPartition,
    fits: &[ComponentFit],
) -> GraphFit {
    let mut log_goodness = vec![0.0; graph.docs().len()];
    let mut log_bias = vec![0.0; graph.positions().len()];
    let anchored = partition
        .anchored
        .and_then(|a| fits.iter().find(|f| f.component == a));
    let mu = match anchored {
        Some(fit) => fit.mean_log_goodness(),
        None if fits.is_empty() => 0.0,
        None => fits.iter().map(ComponentFit::mean_log_goodness).sum::<f64>() / fits.len() as f64,
    };
    for fit in fits {
        let shift = if Some(fit.component) == partition.anchored {
            0.0
        } else {
            mu - fit.mean_log_goodness()
        };
        for &(d, g) in &fit.log_goodness {
            log_goodness[d] = g + shift;
        }
        for &(p, b) in &fit.log_bias {
            log_bias[p] = b - shift;
        }
    }
    let residual = rms_residual(graph, &log_goodness, &log_bias);
    GraphFit {
        log_goodness,
        log_bias,
        partition: partition.clone(),
        mu,
        residual,
    }
}

pub(crate) fn rms_residual<D>(graph: &BipartiteGraph<D>, log_goodness: &[f64], log_bias: &[f64]) -> f64 {
    let edges = graph.edges();
    if edges.is_empty() {
        return 0.0;
    }
    let sq: f64 = edges
        .iter()
        .map(|e| {
            let r = log_goodness[e.doc] + log_bias[e.pos] - e.log_ctr;
            r * r
        })
        .sum();
    (sq / edges.len() as f64).sqrt()
}

/// Components, per-component solves and alignment for any bipartite graph.
pub fn fit_graph<D>(graph: &BipartiteGraph<D>, options: &FitOptions) -> Result<GraphFit, SolverError> {
    if graph.is_empty() {
        return Err(SolverError::EmptyInput);
    }
    let partition = graph.connected_components();
    let fits = (0..partition.count)
        .map(|c| {
            let docs = partition.docs_in(c);
            let positions = partition.positions_in(c);
            // Positions are sorted, so the first one is 1 when present,
            // otherwise the smallest (highest-ranked) position.
            let anchor = *positions.first().ok_or(SolverError::EmptyComponent(c))?;
            fit_component(graph, c, &docs, &positions, anchor, options)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(align_components(graph, &partition, &fits))
}

/// Fitted log-goodness and log-bias of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryModel {
    pub query_id: String,
    /// Sorted document ids.
    pub docs: Vec<String>,
    pub log_goodness: Vec<f64>,
    pub doc_component: Vec<usize>,
    /// Sorted positions.
    pub positions: Vec<u32>,
    pub log_bias: Vec<f64>,
    pub pos_component: Vec<usize>,
    pub components: usize,
    pub anchored_component: Option<usize>,
    pub mu: f64,
    pub residual: f64,
}

impl QueryModel {
    fn from_fit(query_id: &str, graph: &BipartiteGraph<String>, fit: GraphFit) -> Self {
        Self {
            query_id: query_id.to_owned(),
            docs: graph.docs().to_vec(),
            log_goodness: fit.log_goodness,
            doc_component: fit.partition.doc_component,
            positions: graph.positions().to_vec(),
            log_bias: fit.log_bias,
            pos_component: fit.partition.pos_component,
            components: fit.partition.count,
            anchored_component: fit.partition.anchored,
            mu: fit.mu,
            residual: fit.residual,
        }
    }

    pub fn log_goodness_of(&self, doc: &str) -> Option<f64> {
        self.docs
            .binary_search_by(|d| d.as_str().cmp(doc))
            .ok()
            .map(|i| self.log_goodness[i])
    }

    pub fn log_bias_at(&self, position: u32) -> Option<f64> {
        self.positions
            .binary_search(&position)
            .ok()
            .map(|i| self.log_bias[i])
    }

    /// `g = exp(log_goodness)`.
    pub fn goodness(&self, doc: &str) -> Option<f64> {
        self.log_goodness_of(doc).map(f64::exp)
    }

    /// `p = exp(log_bias)`.
    pub fn bias(&self, position: u32) -> Option<f64> {
        self.log_bias_at(position).map(f64::exp)
    }

    /// `exp(g_doc + p_position)`, capped at 1.
    pub fn predict_ctr(&self, doc: &str, position: u32) -> Result<f64, Uncovered> {
        let g = self
            .log_goodness_of(doc)
            .ok_or_else(|| Uncovered::Doc(doc.to_owned()))?;
        let p = self
            .log_bias_at(position)
            .ok_or(Uncovered::Position(position))?;
        Ok((g + p).exp().min(1.0))
    }

    /// Log-bias vector over positions `1..=n` when all of them sit in the
    /// anchored component.
    pub fn full_bias_vector(&self, n: u32) -> Option<Vec<f64>> {
        let anchored = self.anchored_component?;
        (1..=n)
            .map(|j| {
                let i = self.positions.binary_search(&j).ok()?;
                (self.pos_component[i] == anchored).then_some(self.log_bias[i])
            })
            .collect()
    }

    /// Positions and nodes in the largest component.
    pub fn largest_component(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for c in 0..self.components {
            let docs = self.doc_component.iter().filter(|&&x| x == c).count();
            let positions = self.pos_component.iter().filter(|&&x| x == c).count();
            if docs + positions > best.1 {
                best = (positions, docs + positions);
            }
        }
        best
    }
}

/// Fits one query's triples.
pub fn fit_query(triples: &[Triple], options: &FitOptions) -> Result<QueryModel, SolverError> {
    let first = triples.first().ok_or(SolverError::EmptyInput)?;
    let graph = build_graph(triples)?;
    let fit = fit_graph(&graph, options)?;
    Ok(QueryModel::from_fit(&first.query_id, &graph, fit))
}

/// Per-query fits of a whole table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitAll {
    pub models: BTreeMap<String, QueryModel>,
    pub failures: BTreeMap<String, SolverError>,
}

impl FitAll {
    pub fn predict_ctr(&self, query: &str, doc: &str, position: u32) -> Result<f64, Uncovered> {
        self.models
            .get(query)
            .ok_or_else(|| Uncovered::Query(query.to_owned()))?
            .predict_ctr(doc, position)
    }
}

/// Fits every query independently on the rayon pool. Failures are collected
/// rather than aborting the batch.
pub fn fit_all(table: &TripleTable, options: &FitOptions) -> FitAll {
    let entries: Vec<_> = table.iter().collect();
    let total = entries.len();
    let done = AtomicUsize::new(0);
    let step = (total / 10).max(1);
    let results: Vec<_> = entries
        .par_iter()
        .map(|(query, entry)| {
            let result = fit_query(&entry.triples, options);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % step == 0 || n == total {
                log::debug!("fitted {n}/{total} queries");
            }
            (query.to_string(), result)
        })
        .collect();
    let mut out = FitAll::default();
    for (query, result) in results {
        match result {
            Ok(model) => {
                out.models.insert(query, model);
            }
            Err(err) => {
                log::warn!("query {query:?}: {err}");
                out.failures.insert(query, err);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicklog::QueryTriples;

    fn exact(q: &str, entries: &[(&str, u32, f64)]) -> Vec<Triple> {
        entries
            .iter()
            .map(|&(d, p, c)| Triple::with_ctr(q, d, p, 1_000_000, c))
            .collect()
    }

    #[test]
    fn single_equation() {
        let m = fit_query(&exact("q", &[("dA", 1, 0.4)]), &FitOptions::default()).unwrap();
        assert!((m.log_goodness_of("dA").unwrap() - 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(m.log_bias_at(1), Some(0.0));
        assert_eq!(m.residual, 0.0);
    }

    #[test]
    fn consistent_product_system() {
        let t = exact("q", &[("dA", 1, 0.4), ("dA", 2, 0.2), ("dB", 1, 0.3), ("dB", 2, 0.15)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert!((m.goodness("dA").unwrap() - 0.4).abs() < 1e-12);
        assert!((m.goodness("dB").unwrap() - 0.3).abs() < 1e-12);
        assert!((m.bias(2).unwrap() - 0.5).abs() < 1e-12);
        assert!(m.residual < 1e-12);
    }

    #[test]
    fn inconsistent_system_has_positive_residual() {
        let t = exact("q", &[("dA", 1, 0.4), ("dA", 2, 0.3), ("dB", 1, 0.4), ("dB", 2, 0.1)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert!(m.residual > 0.0);
    }

    #[test]
    fn two_components_align_to_anchor_mean() {
        let t = exact("q", &[("dA", 1, 0.4), ("dB", 2, 0.2)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert_eq!(m.components, 2);
        let ln4 = 0.4f64.ln();
        assert!((m.log_goodness_of("dA").unwrap() - ln4).abs() < 1e-15);
        assert!((m.mu - ln4).abs() < 1e-15);
        assert!((m.log_goodness_of("dB").unwrap() - ln4).abs() < 1e-15);
        assert!((m.log_bias_at(2).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn without_position_one_mu_is_mean_of_means() {
        let t = exact("q", &[("dA", 2, 0.4), ("dB", 3, 0.1)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert_eq!(m.anchored_component, None);
        let want = (0.4f64.ln() + 0.1f64.ln()) / 2.0;
        assert!((m.mu - want).abs() < 1e-15);
        assert!((m.log_goodness_of("dA").unwrap() - want).abs() < 1e-15);
        // within-component fit is preserved
        let c = m.log_goodness_of("dB").unwrap() + m.log_bias_at(3).unwrap();
        assert!((c - 0.1f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn prediction() {
        let t = exact("q", &[("dA", 1, 0.4), ("dA", 2, 0.2)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert!((m.predict_ctr("dA", 2).unwrap() - 0.2).abs() < 1e-15);
        assert!((m.predict_ctr("dA", 1).unwrap() - m.goodness("dA").unwrap()).abs() < 1e-15);
        assert_eq!(m.predict_ctr("dZ", 1), Err(Uncovered::Doc("dZ".into())));
        assert_eq!(m.predict_ctr("dA", 7), Err(Uncovered::Position(7)));

        let one = fit_query(&exact("q", &[("dA", 1, 1.0)]), &FitOptions::default()).unwrap();
        assert_eq!(one.predict_ctr("dA", 1).unwrap(), 1.0);
    }

    #[test]
    fn prediction_is_capped_at_one() {
        let t = exact("q", &[("dA", 1, 0.9), ("dA", 2, 0.9), ("dB", 2, 0.9), ("dB", 3, 0.9), ("dC", 3, 0.9)]);
        let mut m = fit_query(&t, &FitOptions::default()).unwrap();
        m.log_bias[2] = 0.5;
        assert_eq!(m.predict_ctr("dC", 3).unwrap(), 1.0);
    }

    #[test]
    fn weighted_mode_favors_heavy_edges() {
        let mut t = exact("q", &[("dA", 1, 0.4), ("dA", 2, 0.3), ("dB", 1, 0.4), ("dB", 2, 0.1)]);
        t[3].impressions = 1_000_000_000;
        let plain = fit_query(&t, &FitOptions::default()).unwrap();
        let weighted = fit_query(&t, &FitOptions { weighting: Weighting::Impressions }).unwrap();
        let err = |m: &QueryModel| (m.predict_ctr("dB", 2).unwrap().ln() - 0.1f64.ln()).abs();
        assert!(err(&weighted) < err(&plain));
    }

    #[test]
    fn fit_all_collects_every_query() {
        let mut table = TripleTable::new();
        for q in ["a", "b", "c"] {
            table.insert_query(
                q,
                QueryTriples {
                    triples: exact(q, &[("d1", 1, 0.5), ("d1", 2, 0.25)]),
                    frequency: 1,
                },
            );
        }
        let all = fit_all(&table, &FitOptions::default());
        assert_eq!(all.models.len(), 3);
        assert!(all.failures.is_empty());
        assert!(fit_all(&TripleTable::new(), &FitOptions::default()).models.is_empty());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(fit_query(&[], &FitOptions::default()), Err(SolverError::EmptyInput));
    }

    #[test]
    fn full_bias_vector_requires_anchored_coverage() {
        let t = exact("q", &[("a", 1, 0.5), ("a", 2, 0.4), ("b", 2, 0.3), ("b", 3, 0.2)]);
        let m = fit_query(&t, &FitOptions::default()).unwrap();
        assert_eq!(m.full_bias_vector(3).map(|v| v.len()), Some(3));
        assert_eq!(m.full_bias_vector(4), None);
        assert_eq!(m.largest_component(), (3, 5));
    }
}
