//! On-disk model files and the provenance header carried by every artifact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{GlobalEhModel, UbmModel};
use crate::solver::{FitAll, QueryModel, Uncovered};

pub const FORMAT_VERSION: u32 = 1;

/// Where an artifact came from: the producing command, its configuration and
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub version: u32,
    pub tool: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(format: &str, command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            format: format.to_owned(),
            version: FORMAT_VERSION,
            tool: concat!("clickbias ", env!("CARGO_PKG_VERSION")).to_owned(),
            command: command.to_owned(),
            seed,
            config,
        }
    }

    /// Comment lines for tabular files (without the leading `#`).
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("format={} version={}", self.format, self.version),
            format!("tool={} command={}", self.tool, self.command),
            format!("seed={}", self.seed.map_or("none".to_owned(), |s| s.to_string())),
            format!("config={}", self.config),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsehFile {
    pub provenance: Provenance,
    pub models: Vec<QueryModel>,
    /// Queries whose fit failed, with the reason.
    pub failures: BTreeMap<String, String>,
}

impl QsehFile {
    pub fn new(provenance: Provenance, fits: &FitAll) -> Self {
        Self {
            provenance,
            models: fits.models.values().cloned().collect(),
            failures: fits
                .failures
                .iter()
                .map(|(q, e)| (q.clone(), e.to_string()))
                .collect(),
        }
    }

    pub fn to_fits(&self) -> FitAll {
        FitAll {
            models: self.models.iter().map(|m| (m.query_id.clone(), m.clone())).collect(),
            failures: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub query: String,
    pub doc: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionValue {
    pub position: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleValue {
    pub query: String,
    pub doc: String,
    pub position: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhFile {
    pub provenance: Provenance,
    pub log_bias: Vec<PositionValue>,
    pub log_goodness: Vec<PairValue>,
    pub components: usize,
    pub mu: f64,
    pub residual: f64,
}

impl EhFile {
    pub fn new(provenance: Provenance, model: &GlobalEhModel) -> Self {
        Self {
            provenance,
            log_bias: model
                .log_bias
                .iter()
                .map(|(&position, &value)| PositionValue { position, value })
                .collect(),
            log_goodness: model
                .log_goodness
                .iter()
                .map(|((q, d), &value)| PairValue { query: q.clone(), doc: d.clone(), value })
                .collect(),
            components: model.components,
            mu: model.mu,
            residual: model.residual,
        }
    }

    pub fn to_model(&self) -> GlobalEhModel {
        GlobalEhModel {
            log_goodness: self
                .log_goodness
                .iter()
                .map(|p| ((p.query.clone(), p.doc.clone()), p.value))
                .collect(),
            log_bias: self.log_bias.iter().map(|p| (p.position, p.value)).collect(),
            components: self.components,
            mu: self.mu,
            residual: self.residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbmFile {
    pub provenance: Provenance,
    pub n_positions: usize,
    /// `gamma[j - 1][r]`, `r` the last clicked position (0 for none).
    pub gamma: Vec<Vec<f64>>,
    pub gamma_observed: Vec<Vec<bool>>,
    pub goodness: Vec<PairValue>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: Vec<f64>,
    /// Expected ctr of every `(query, doc, position)` in the training log.
    pub marginals: Vec<TripleValue>,
}

impl UbmFile {
    pub fn new(
        provenance: Provenance,
        model: &UbmModel,
        marginals: &BTreeMap<(String, String, u32), f64>,
    ) -> Self {
        Self {
            provenance,
            n_positions: model.n_positions,
            gamma: model.gamma.clone(),
            gamma_observed: model.gamma_observed.clone(),
            goodness: model
                .goodness
                .iter()
                .map(|((q, d), &value)| PairValue { query: q.clone(), doc: d.clone(), value })
                .collect(),
            iterations: model.iterations,
            converged: model.converged,
            log_likelihood: model.log_likelihood.clone(),
            marginals: marginals
                .iter()
                .map(|((q, d, j), &value)| TripleValue {
                    query: q.clone(),
                    doc: d.clone(),
                    position: *j,
                    value,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> UbmModel {
        UbmModel {
            n_positions: self.n_positions,
            goodness: self
                .goodness
                .iter()
                .map(|p| ((p.query.clone(), p.doc.clone()), p.value))
                .collect(),
            gamma: self.gamma.clone(),
            gamma_observed: self.gamma_observed.clone(),
            iterations: self.iterations,
            converged: self.converged,
            log_likelihood: self.log_likelihood.clone(),
        }
    }
}

/// Any model file, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelFile {
    Qseh(QsehFile),
    Eh(EhFile),
    Ubm(UbmFile),
}

impl ModelFile {
    pub fn provenance(&self) -> &Provenance {
        match self {
            ModelFile::Qseh(f) => &f.provenance,
            ModelFile::Eh(f) => &f.provenance,
            ModelFile::Ubm(f) => &f.provenance,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Qseh(_) => "qseh",
            ModelFile::Eh(_) => "eh",
            ModelFile::Ubm(_) => "ubm",
        }
    }

    /// Predictor of `(query, doc, position)` click-through rates.
    pub fn predictor(&self) -> Predictor {
        match self {
            ModelFile::Qseh(f) => Predictor::Qseh(f.to_fits()),
            ModelFile::Eh(f) => Predictor::Eh(f.to_model()),
            ModelFile::Ubm(f) => Predictor::Ubm(
                f.marginals
                    .iter()
                    .map(|m| ((m.query.clone(), m.doc.clone(), m.position), m.value))
                    .collect(),
            ),
        }
    }
}

pub enum Predictor {
    Qseh(FitAll),
    Eh(GlobalEhModel),
    Ubm(BTreeMap<(String, String, u32), f64>),
}

impl Predictor {
    pub fn predict(&self, query: &str, doc: &str, position: u32) -> Result<f64, Uncovered> {
        match self {
            Predictor::Qseh(fits) => fits.predict_ctr(query, doc, position),
            Predictor::Eh(model) => model.predict_ctr(query, doc, position),
            Predictor::Ubm(marginals) => marginals
                .get(&(query.to_owned(), doc.to_owned(), position))
                .copied()
                .ok_or_else(|| Uncovered::Doc(doc.to_owned())),
        }
    }
}
