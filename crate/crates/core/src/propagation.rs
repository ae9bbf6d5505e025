//! Goodness propagation across similar queries: `L = (G G')^l G`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::FitAll;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("goodness matrix is empty")]
    Empty,
    #[error("goodness for ({query}, {doc}) is {value}; must be positive and finite")]
    BadEntry { query: String, doc: String, value: f64 },
    #[error("duplicate entry ({query}, {doc})")]
    Duplicate { query: String, doc: String },
    #[error("path parameter must be at least 1")]
    BadPathLength,
    #[error("product would hold {entries} non-zeros (~{bytes} bytes), above the limit of {limit}")]
    TooDense { entries: usize, bytes: usize, limit: usize },
}

/// Sparse matrix stored as sorted `(column, value)` lists per row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(u32, f64)>>,
}

const BYTES_PER_ENTRY: usize = std::mem::size_of::<(u32, f64)>();

impl SparseRows {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = &self.rows[row];
        r.binary_search_by_key(&(col as u32), |e| e.0).map_or(0.0, |i| r[i].1)
    }

    pub fn transpose(&self) -> SparseRows {
        let mut rows = vec![Vec::new(); self.ncols];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                rows[j as usize].push((i as u32, v));
            }
        }
        SparseRows { ncols: self.nrows(), rows }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.ncols];
                for &(j, v) in row {
                    dense[j as usize] = v;
                }
                dense
            })
            .collect()
    }

    /// Non-zero count of `self * rhs` without computing values.
    pub fn product_nnz(&self, rhs: &SparseRows) -> usize {
        self.rows
            .par_iter()
            .enumerate()
            .map_init(
                || vec![usize::MAX; rhs.ncols],
                |mark, (row_id, row)| {
                    let mut count = 0;
                    for &(k, _) in row {
                        for &(j, _) in &rhs.rows[k as usize] {
                            if mark[j as usize] != row_id {
                                mark[j as usize] = row_id;
                                count += 1;
                            }
                        }
                    }
                    count
                },
            )
            .sum()
    }

    /// `self * rhs`, parallel over output rows.
    pub fn multiply(&self, rhs: &SparseRows) -> SparseRows {
        assert_eq!(self.ncols, rhs.nrows(), "inner dimensions differ");
        let rows = self
            .rows
            .par_iter()
            .map_init(
                || (vec![0.0; rhs.ncols], vec![false; rhs.ncols], Vec::new()),
                |(acc, seen, touched), row| {
                    for &(k, a) in row {
                        for &(j, b) in &rhs.rows[k as usize] {
                            let j = j as usize;
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            acc[j] += a * b;
                        }
                    }
                    touched.sort_unstable();
                    let out: Vec<(u32, f64)> = touched
                        .iter()
                        .map(|&j| {
                            let v = acc[j];
                            acc[j] = 0.0;
                            seen[j] = false;
                            (j as u32, v)
                        })
                        .collect();
                    touched.clear();
                    out
                },
            )
            .collect();
        SparseRows { ncols: rhs.ncols, rows }
    }

    fn checked_multiply(&self, rhs: &SparseRows, limit: usize) -> Result<SparseRows, PropagationError> {
        let entries = self.product_nnz(rhs);
        if entries > limit {
            return Err(PropagationError::TooDense {
                entries,
                bytes: entries * BYTES_PER_ENTRY,
                limit,
            });
        }
        Ok(self.multiply(rhs))
    }

    /// Scales each row to sum to one; all-zero rows are left alone.
    pub fn row_stochastic(&self) -> SparseRows {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let total: f64 = row.iter().map(|e| e.1).sum();
                if total == 0.0 {
                    row.clone()
                } else {
                    row.iter().map(|&(j, v)| (j, v / total)).collect()
                }
            })
            .collect();
        SparseRows { ncols: self.ncols, rows }
    }
}

/// Query-by-document goodness matrix with its id maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessMatrix {
    queries: Vec<String>,
    docs: Vec<String>,
    matrix: SparseRows,
}

impl GoodnessMatrix {
    /// Builds the matrix from `(query, doc, goodness)`; queries and docs are
    /// indexed in sorted order.
    pub fn from_entries<I, Q, D>(entries: I) -> Result<Self, PropagationError>
    where
        I: IntoIterator<Item = (Q, D, f64)>,
        Q: Into<String>,
        D: Into<String>,
    {
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (q, d, g) in entries {
            let (query, doc) = (q.into(), d.into());
            if !(g > 0.0 && g.is_finite()) {
                return Err(PropagationError::BadEntry { query, doc, value: g });
            }
            if cells.contains_key(&(query.clone(), doc.clone())) {
                return Err(PropagationError::Duplicate { query, doc });
            }
            cells.insert((query, doc), g);
        }
        if cells.is_empty() {
            return Err(PropagationError::Empty);
        }
        let mut docs: Vec<String> = cells.keys().map(|(_, d)| d.clone()).collect();
        docs.sort_unstable();
        docs.dedup();
        let mut queries: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
        for ((q, d), g) in cells {
            if queries.last() != Some(&q) {
                queries.push(q);
                rows.push(Vec::new());
            }
            let col = docs.binary_search(&d).expect("doc was collected") as u32;
            rows.last_mut().expect("row was pushed").push((col, g));
        }
        let matrix = SparseRows { ncols: docs.len(), rows };
        Ok(Self { queries, docs, matrix })
    }

    /// Goodness `exp(log_goodness)` of every fitted query model.
    pub fn from_models(fits: &FitAll) -> Result<Self, PropagationError> {
        Self::from_entries(fits.models.values().flat_map(|m| {
            m.docs
                .iter()
                .zip(&m.log_goodness)
                .map(move |(d, g)| (m.query_id.clone(), d.clone(), g.exp()))
        }))
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn docs(&self) -> &[String] {
        &self.docs
    }

    pub fn matrix(&self) -> &SparseRows {
        &self.matrix
    }

    pub fn query_index(&self, query: &str) -> Option<usize> {
        self.queries.binary_search_by(|q| q.as_str().cmp(query)).ok()
    }
}

/// `S = G G'`.
pub fn similarity(g: &GoodnessMatrix) -> SparseRows {
    g.matrix.multiply(&g.matrix.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub path_length: u32,
    /// Normalize rows of `S` to sum to one before multiplying.
    pub row_stochastic: bool,
    /// Largest number of non-zeros any intermediate product may hold.
    pub max_entries: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            path_length: 1,
            row_stochastic: false,
            max_entries: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Inferred,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Inferred => "inferred",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub queries: Vec<String>,
    pub docs: Vec<String>,
    pub scores: SparseRows,
    /// Per row, whether each non-zero was already present in `G`.
    pub provenance: Vec<Vec<Provenance>>,
}

/// One scored `(query, doc)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query: String,
    pub doc: String,
    pub score: f64,
    pub provenance: Provenance,
}

impl Propagated {
    /// All non-zero entries, row by row in query and doc order.
    pub fn entries(&self) -> impl Iterator<Item = ScoredPair> + '_ {
        self.scores.rows.iter().enumerate().flat_map(move |(i, row)| {
            row.iter().zip(&self.provenance[i]).map(move |(&(j, v), &p)| ScoredPair {
                query: self.queries[i].clone(),
                doc: self.docs[j as usize].clone(),
                score: v,
                provenance: p,
            })
        })
    }

    pub fn inferred_count(&self) -> usize {
        self.provenance.iter().flatten().filter(|&&p| p == Provenance::Inferred).count()
    }

    /// Documents of `query` ordered by propagated score.
    pub fn ranking(&self, query: &str) -> Option<Vec<(String, f64)>> {
        let i = self.queries.binary_search_by(|q| q.as_str().cmp(query)).ok()?;
        Some(rank_by_goodness(&self.scores.rows[i], &self.docs))
    }
}

/// `L = S^l G` with `S = G G'` (optionally row-normalized).
pub fn propagate(g: &GoodnessMatrix, options: &PropagationOptions) -> Result<Propagated, PropagationError> {
    if options.path_length < 1 {
        return Err(PropagationError::BadPathLength);
    }
    let limit = options.max_entries;
    let gt = g.matrix.transpose();
    let mut s = g.matrix.checked_multiply(&gt, limit)?;
    if options.row_stochastic {
        s = s.row_stochastic();
    }
    let mut l = g.matrix.clone();
    for _ in 0..options.path_length {
        l = s.checked_multiply(&l, limit)?;
    }
    let provenance = l
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let original = &g.matrix.rows[i];
            row.iter()
                .map(|&(j, _)| {
                    if original.binary_search_by_key(&j, |e| e.0).is_ok() {
                        Provenance::Original
                    } else {
                        Provenance::Inferred
                    }
                })
                .collect()
        })
        .collect();
    Ok(Propagated {
        queries: g.queries.clone(),
        docs: g.docs.clone(),
        scores: l,
        provenance,
    })
}

/// Sorts a sparse row by descending value, ties by document id.
pub fn rank_by_goodness(row: &[(u32, f64)], docs: &[String]) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = row.iter().map(|&(j, v)| (docs[j as usize].clone(), v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}
