use std::collections::BTreeMap;

use crate::clicklog::TripleTable;
use crate::graph::BipartiteGraph;
use crate::solver::{fit_graph, FitOptions, SolverError, Uncovered};

/// Examination hypothesis with one bias curve shared by every query.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEhModel {
    /// Log-goodness per `(query, doc)`.
    pub log_goodness: BTreeMap<(String, String), f64>,
    /// Shared log-bias per position; position 1 is 0 when present.
    pub log_bias: BTreeMap<u32, f64>,
    pub components: usize,
    pub mu: f64,
    pub residual: f64,
}

impl GlobalEhModel {
    pub fn predict_ctr(&self, query: &str, doc: &str, position: u32) -> Result<f64, Uncovered> {
        let g = self
            .log_goodness
            .get(&(query.to_owned(), doc.to_owned()))
            .ok_or_else(|| Uncovered::Doc(doc.to_owned()))?;
        let p = self
            .log_bias
            .get(&position)
            .ok_or(Uncovered::Position(position))?;
        Ok((g + p).exp().min(1.0))
    }
}

/// Solves `g_(q,d) + p_j = ln ctr` over every triple of the table with a single
/// shared position vector. All queries meet at the position nodes, so this is
/// the per-query solver applied to the corpus-wide bipartite graph.
pub fn fit_global_eh(table: &TripleTable, options: &FitOptions) -> Result<GlobalEhModel, SolverError> {
    if table.num_triples() == 0 {
        return Err(SolverError::EmptyInput);
    }
    let graph = BipartiteGraph::from_entries(table.triples().map(|t| {
        (
            (t.query_id.clone(), t.doc_id.clone()),
            t.position,
            t.ctr(),
            t.impressions as f64,
        )
    }))?;
    let fit = fit_graph(&graph, options)?;
    Ok(GlobalEhModel {
        log_goodness: graph.docs().iter().cloned().zip(fit.log_goodness).collect(),
        log_bias: graph.positions().iter().copied().zip(fit.log_bias).collect(),
        components: fit.partition.count,
        mu: fit.mu,
        residual: fit.residual,
    })
}
