//! Document–position bipartite graphs, their connected components and simple
//! cycles.
//!
//! Every retained triple of a query becomes an edge between its document and
//! its position, labelled with the log click-through rate. The graph decides
//! which goodness and bias values are comparable: only those in the same
//! connected component.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt::Debug;

use thiserror::Error;

use crate::clicklog::Triple;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate edge for document {doc} at position {position}")]
    DuplicateEdge { doc: String, position: u32 },
    #[error("click-through rate {ctr} at position {position} is outside (0, 1]")]
    BadCtr { ctr: f64, position: u32 },
    #[error("triples from more than one query ({0:?} and {1:?})")]
    MixedQueries(String, String),
    #[error("position 0 is not valid; positions are 1-based")]
    ZeroPosition,
}

/// A node of the bipartite graph, by index into the graph's document or
/// position list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Doc(usize),
    Position(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub doc: usize,
    pub pos: usize,
    /// Natural log of the click-through rate, always `<= 0`.
    pub log_ctr: f64,
    /// Impressions behind the edge, used by weighted fits.
    pub impressions: f64,
}

/// Bipartite graph with documents of key type `D` on one side and 1-based
/// positions on the other. Documents and positions are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph<D = String> {
    docs: Vec<D>,
    positions: Vec<u32>,
    edges: Vec<Edge>,
    doc_adj: Vec<Vec<usize>>,
    pos_adj: Vec<Vec<usize>>,
}

impl<D: Ord + Clone + Debug> BipartiteGraph<D> {
    /// Builds a graph from `(doc, position, ctr, impressions)` entries.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (D, u32, f64, f64)>,
    ) -> Result<Self, GraphError> {
        let entries: Vec<_> = entries.into_iter().collect();
        let docs: Vec<D> = entries
            .iter()
            .map(|e| e.0.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let positions: Vec<u32> = entries
            .iter()
            .map(|e| e.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if positions.first() == Some(&0) {
            return Err(GraphError::ZeroPosition);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let mut edges = Vec::with_capacity(entries.len());
        for (doc, position, ctr, impressions) in entries {
            if !(ctr > 0.0 && ctr <= 1.0) {
                return Err(GraphError::BadCtr { ctr, position });
            }
            let d = docs.binary_search(&doc).expect("doc collected");
            let p = positions.binary_search(&position).expect("position collected");
            if !seen.insert((d, p)) {
                return Err(GraphError::DuplicateEdge {
                    doc: format!("{doc:?}"),
                    position,
                });
            }
            edges.push(Edge {
                doc: d,
                pos: p,
                log_ctr: ctr.ln(),
                impressions,
            });
        }
        edges.sort_by_key(|e| (e.doc, e.pos));
        let mut doc_adj = vec![Vec::new(); docs.len()];
        let mut pos_adj = vec![Vec::new(); positions.len()];
        for (i, e) in edges.iter().enumerate() {
            doc_adj[e.doc].push(i);
            pos_adj[e.pos].push(i);
        }
        Ok(Self {
            docs,
            positions,
            edges,
            doc_adj,
            pos_adj,
        })
    }

    pub fn doc_index(&self, doc: &D) -> Option<usize> {
        self.docs.binary_search(doc).ok()
    }
}

impl<D> BipartiteGraph<D> {
    pub fn docs(&self) -> &[D] {
        &self.docs
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.docs.len() + self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn position_index(&self, position: u32) -> Option<usize> {
        self.positions.binary_search(&position).ok()
    }

    /// Edge indices incident to a document, ordered by position.
    pub fn doc_edges(&self, doc: usize) -> &[usize] {
        &self.doc_adj[doc]
    }

    /// Edge indices incident to a position, ordered by document.
    pub fn position_edges(&self, pos: usize) -> &[usize] {
        &self.pos_adj[pos]
    }

    pub fn edge_between(&self, doc: usize, pos: usize) -> Option<usize> {
        self.doc_adj[doc]
            .binary_search_by_key(&pos, |&e| self.edges[e].pos)
            .ok()
            .map(|i| self.doc_adj[doc][i])
    }

    /// Labels every node with a component id. Ids are assigned by a
    /// breadth-first sweep over positions in ascending order, then documents,
    /// so position 1 (when present) always lands in component 0.
    pub fn connected_components(&self) -> ComponentPartition {
        const UNSET: usize = usize::MAX;
        let mut doc_component = vec![UNSET; self.docs.len()];
        let mut pos_component = vec![UNSET; self.positions.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        let starts = (0..self.positions.len())
            .map(Node::Position)
            .chain((0..self.docs.len()).map(Node::Doc));
        for start in starts {
            let unset = match start {
                Node::Position(p) => pos_component[p] == UNSET,
                Node::Doc(d) => doc_component[d] == UNSET,
            };
            if !unset {
                continue;
            }
            queue.push_back(start);
            while let Some(node) = queue.pop_front() {
                match node {
                    Node::Position(p) => {
                        if pos_component[p] != UNSET {
                            continue;
                        }
                        pos_component[p] = count;
                        for &e in &self.pos_adj[p] {
                            let d = self.edges[e].doc;
                            if doc_component[d] == UNSET {
                                queue.push_back(Node::Doc(d));
                            }
                        }
                    }
                    Node::Doc(d) => {
                        if doc_component[d] != UNSET {
                            continue;
                        }
                        doc_component[d] = count;
                        for &e in &self.doc_adj[d] {
                            let p = self.edges[e].pos;
                            if pos_component[p] == UNSET {
                                queue.push_back(Node::Position(p));
                            }
                        }
                    }
                }
            }
            count += 1;
        }
        let anchored = self
            .positions
            .binary_search(&1)
            .ok()
            .map(|p| pos_component[p]);
        ComponentPartition {
            doc_component,
            pos_component,
            count,
            anchored,
        }
    }

    /// Enumerates simple cycles with at most `max_length` edges, stopping
    /// after `max_count` cycles.
    ///
    /// Each cycle is reported once, starting at its smallest document and
    /// walking towards the smaller of that document's two cycle neighbours.
    /// Cycles come out in lexicographic order of their node sequences.
    pub fn enumerate_cycles(&self, max_length: usize, max_count: usize) -> CycleEnumeration {
        let mut search = CycleSearch {
            graph: self,
            max_length,
            max_count,
            start: 0,
            doc_path: Vec::new(),
            pos_path: Vec::new(),
            edge_path: Vec::new(),
            on_path_doc: vec![false; self.docs.len()],
            on_path_pos: vec![false; self.positions.len()],
            cycles: Vec::new(),
            truncated: false,
        };
        if max_length >= 4 && max_count > 0 {
            for start in 0..self.docs.len() {
                search.start = start;
                search.doc_path.push(start);
                search.on_path_doc[start] = true;
                let stop = search.from_doc(start);
                search.on_path_doc[start] = false;
                search.doc_path.pop();
                if stop {
                    break;
                }
            }
        }
        CycleEnumeration {
            cycles: search.cycles,
            truncated: search.truncated,
        }
    }
}

/// Builds the graph of one query's triples; edges carry `ln(ctr)`.
pub fn build_graph(triples: &[Triple]) -> Result<BipartiteGraph<String>, GraphError> {
    if let Some(first) = triples.first() {
        if let Some(other) = triples.iter().find(|t| t.query_id != first.query_id) {
            return Err(GraphError::MixedQueries(
                first.query_id.clone(),
                other.query_id.clone(),
            ));
        }
    }
    BipartiteGraph::from_entries(
        triples
            .iter()
            .map(|t| (t.doc_id.clone(), t.position, t.ctr(), t.impressions as f64)),
    )
}

/// Component label of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPartition {
    pub doc_component: Vec<usize>,
    pub pos_component: Vec<usize>,
    pub count: usize,
    /// Component holding position 1, if position 1 is in the graph.
    pub anchored: Option<usize>,
}

impl ComponentPartition {
    pub fn docs_in(&self, component: usize) -> Vec<usize> {
        indices_with(&self.doc_component, component)
    }

    pub fn positions_in(&self, component: usize) -> Vec<usize> {
        indices_with(&self.pos_component, component)
    }

    /// `(documents, positions)` per component.
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![(0, 0); self.count];
        for &c in &self.doc_component {
            sizes[c].0 += 1;
        }
        for &c in &self.pos_component {
            sizes[c].1 += 1;
        }
        sizes
    }

    /// The component with the most nodes; ties go to the lower id.
    pub fn largest(&self) -> Option<usize> {
        let sizes = self.sizes();
        (0..self.count).max_by_key(|&c| (sizes[c].0 + sizes[c].1, std::cmp::Reverse(c)))
    }
}

fn indices_with(labels: &[usize], component: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == component)
        .map(|(i, _)| i)
        .collect()
}

/// A simple cycle `d1, j1, d2, j2, …, dk, jk` closing back to `d1`.
///
/// `log_ctrs` lists edge labels in traversal order:
/// `(d1,j1), (d2,j1), (d2,j2), (d3,j2), …, (d1,jk)`. Even slots hold the
/// edges `(d_i, j_i)` and odd slots the edges `(d_{i+1}, j_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub docs: Vec<usize>,
    pub positions: Vec<usize>,
    pub edges: Vec<usize>,
    pub log_ctrs: Vec<f64>,
}

impl Cycle {
    /// Number of edges, always even and at least 4.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Alternating node sequence starting at the first document.
    pub fn nodes(&self) -> Vec<Node> {
        self.docs
            .iter()
            .zip(&self.positions)
            .flat_map(|(&d, &p)| [Node::Doc(d), Node::Position(p)])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleEnumeration {
    pub cycles: Vec<Cycle>,
    /// Set when the search stopped at `max_count`.
    pub truncated: bool,
}

struct CycleSearch<'a, D> {
    graph: &'a BipartiteGraph<D>,
    max_length: usize,
    max_count: usize,
    start: usize,
    doc_path: Vec<usize>,
    pos_path: Vec<usize>,
    edge_path: Vec<usize>,
    on_path_doc: Vec<bool>,
    on_path_pos: Vec<bool>,
    cycles: Vec<Cycle>,
    truncated: bool,
}

impl<D> CycleSearch<'_, D> {
    fn path_len(&self) -> usize {
        self.doc_path.len() + self.pos_path.len()
    }

    /// Returns `true` once the cap is reached.
    fn from_doc(&mut self, d: usize) -> bool {
        if self.path_len() + 1 > self.max_length {
            return false;
        }
        let g = self.graph;
        for &e in &g.doc_adj[d] {
            let p = g.edges[e].pos;
            if self.on_path_pos[p] {
                continue;
            }
            self.on_path_pos[p] = true;
            self.pos_path.push(p);
            self.edge_path.push(e);
            let stop = self.from_position(p);
            self.edge_path.pop();
            self.pos_path.pop();
            self.on_path_pos[p] = false;
            if stop {
                return true;
            }
        }
        false
    }

    fn from_position(&mut self, p: usize) -> bool {
        let g = self.graph;
        for &e in &g.pos_adj[p] {
            let d = g.edges[e].doc;
            if d < self.start || self.on_path_doc[d] {
                if d == self.start && self.path_len() >= 4 && self.pos_path[0] < p {
                    if self.cycles.len() >= self.max_count {
                        self.truncated = true;
                        return true;
                    }
                    self.record(e);
                }
                continue;
            }
            if self.path_len() + 2 > self.max_length {
                continue;
            }
            self.on_path_doc[d] = true;
            self.doc_path.push(d);
            self.edge_path.push(e);
            let stop = self.from_doc(d);
            self.edge_path.pop();
            self.doc_path.pop();
            self.on_path_doc[d] = false;
            if stop {
                return true;
            }
        }
        false
    }

    fn record(&mut self, closing_edge: usize) {
        let mut edges = self.edge_path.clone();
        edges.push(closing_edge);
        let log_ctrs = edges.iter().map(|&e| self.graph.edges[e].log_ctr).collect();
        self.cycles.push(Cycle {
            docs: self.doc_path.clone(),
            positions: self.pos_path.clone(),
            edges,
            log_ctrs,
        });
    }
}

/// Number of independent cycles, `|E| - |V| + #components`.
pub fn cyclomatic_number<D>(graph: &BipartiteGraph<D>) -> usize {
    let components = graph.connected_components().count;
    graph.edges().len() + components - graph.num_nodes()
}
