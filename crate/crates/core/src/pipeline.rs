//! End-to-end synthetic experiment: simulate sessions, aggregate, split,
//! fit QSEH, EH and UBM on the training part and score all three on the
//! held-out triples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Provenance;
use crate::baselines::{fit_global_eh, fit_ubm, ubm_triple_marginals, HeldOut, UbmError, UbmOptions};
use crate::biascurve::{fit_alpha, full_coverage_vectors, REFERENCE_CURVE};
use crate::clicklog::{aggregate, split_train_test, AggregateOptions, SplitError, TripleTable};
use crate::evaluation::{
    default_cdf_grid, default_frequency_edges, error_cdf, evaluate, group_eval, CdfPoint, EvalReport, EvalSummary,
    GroupSummary, Grouping,
};
use crate::solver::{fit_all, FitOptions, SolverError, Uncovered};
use crate::synthgen::{gen_ground_truth, simulate_sessions, GenConfig, GroundTruth, SynthError};

pub const REPORT_FORMAT: &str = "clickbias-pipeline-report";

/// Describes the perplexity column of every report.
pub const PERPLEXITY_DEFINITION: &str =
    "2^(-(1/|U|) * sum c * log2(c_pred)) over held-out triples; click term only, predictions floored at 1e-9";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("global model: {0}")]
    Eh(#[from] SolverError),
    #[error(transparent)]
    Ubm(#[from] UbmError),
    #[error("no triples survived aggregation")]
    NoTriples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Generation parameters; `generator.seed` is replaced by one derived
    /// from `seed`.
    pub generator: GenConfig,
    pub sessions_per_query: usize,
    pub aggregate: AggregateOptions,
    pub test_fraction: f64,
    pub fit: FitOptions,
    pub ubm: UbmOptions,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            generator: GenConfig {
                n_queries: 200,
                ..GenConfig::default()
            },
            sessions_per_query: 10_000,
            aggregate: AggregateOptions::default(),
            test_fraction: 0.05,
            fit: FitOptions::default(),
            ubm: UbmOptions::default(),
            seed: 7,
        }
    }
}

/// Seeds of the stochastic stages, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub truth: u64,
    pub sessions: u64,
    pub split: u64,
}

impl StageSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            truth: rng.random(),
            sessions: rng.random(),
            split: rng.random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub queries: usize,
    pub sessions: usize,
    pub triples: usize,
    pub train_triples: usize,
    pub test_triples: usize,
    /// Queries whose training graph has one component.
    pub connected_queries: usize,
    pub fit_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub summary: EvalSummary,
    pub uncovered: usize,
    pub cdf: Vec<CdfPoint>,
    pub by_position: Vec<GroupSummary>,
    pub by_frequency: Vec<GroupSummary>,
}

impl ModelReport {
    fn of(model: &str, report: &EvalReport) -> Self {
        let errors = report.relative_errors();
        Self {
            model: model.to_owned(),
            summary: report.summary.clone(),
            uncovered: report.uncovered,
            cdf: error_cdf(&errors, &default_cdf_grid()).unwrap_or_default(),
            by_position: group_eval(report, &Grouping::Position),
            by_frequency: group_eval(report, &Grouping::Frequency(default_frequency_edges())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
}

/// Recovery of the generating `alpha` on queries whose fitted bias covers
/// every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecovery {
    pub queries: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub provenance: Provenance,
    pub seeds: StageSeeds,
    pub data: DataSummary,
    pub perplexity_definition: String,
    pub models: Vec<ModelReport>,
    pub ubm: UbmDiagnostics,
    pub alpha_recovery: Option<AlphaRecovery>,
}

impl PipelineReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }
}

/// Everything the pipeline produced, for callers that want more than the
/// report.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub truth: GroundTruth,
    pub train: TripleTable,
    pub test: TripleTable,
    pub evaluations: Vec<(String, EvalReport)>,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let seeds = StageSeeds::derive(config.seed);
    let generator = GenConfig {
        seed: seeds.truth,
        ..config.generator.clone()
    };
    let truth = gen_ground_truth(&generator)?;
    log::info!("simulating {} sessions per query", config.sessions_per_query);
    let sessions = simulate_sessions(&truth, config.sessions_per_query, seeds.sessions);
    let table = aggregate(&sessions, config.aggregate);
    if table.num_triples() == 0 {
        return Err(PipelineError::NoTriples);
    }
    let (train, test) = split_train_test(&table, config.test_fraction, seeds.split)?;

    log::info!("fitting per-query models");
    let fits = fit_all(&train, &config.fit);
    log::info!("fitting global model");
    let eh = fit_global_eh(&train, &config.fit)?;
    log::info!("fitting browsing model");
    let held_out: HeldOut = test
        .triples()
        .map(|t| (t.query_id.clone(), t.doc_id.clone(), t.position))
        .collect();
    let ubm = fit_ubm(&sessions, &config.ubm, Some(&held_out))?;
    let marginals = ubm_triple_marginals(&ubm, &sessions);

    let qseh_eval = evaluate(&test, |t| fits.predict_ctr(&t.query_id, &t.doc_id, t.position));
    let eh_eval = evaluate(&test, |t| eh.predict_ctr(&t.query_id, &t.doc_id, t.position));
    let ubm_eval = evaluate(&test, |t| {
        marginals
            .get(&(t.query_id.clone(), t.doc_id.clone(), t.position))
            .copied()
            .ok_or_else(|| Uncovered::Doc(t.doc_id.clone()))
    });
    let evaluations = vec![
        ("qseh".to_owned(), qseh_eval),
        ("eh".to_owned(), eh_eval),
        ("ubm".to_owned(), ubm_eval),
    ];

    let n = config.generator.n_positions as u32;
    let vectors = full_coverage_vectors(fits.models.values(), n);
    let errors: Vec<f64> = vectors
        .iter()
        .filter_map(|v| {
            let q = truth.queries.iter().find(|q| q.query_id == v.query_id)?;
            let a = fit_alpha(&v.log_bias, &REFERENCE_CURVE[..n as usize]).ok()?;
            Some((a.alpha - q.alpha).abs())
        })
        .collect();
    let alpha_recovery = (!errors.is_empty()).then(|| AlphaRecovery {
        queries: errors.len(),
        mean_abs_error: errors.iter().sum::<f64>() / errors.len() as f64,
        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
    });

    let report = PipelineReport {
        provenance: Provenance::new(
            REPORT_FORMAT,
            "pipeline",
            Some(config.seed),
            serde_json::to_value(config).expect("config serializes"),
        ),
        seeds,
        data: DataSummary {
            queries: truth.queries.len(),
            sessions: sessions.len(),
            triples: table.num_triples(),
            train_triples: train.num_triples(),
            test_triples: test.num_triples(),
            connected_queries: fits.models.values().filter(|m| m.components == 1).count(),
            fit_failures: fits.failures.len(),
        },
        perplexity_definition: PERPLEXITY_DEFINITION.to_owned(),
        models: evaluations.iter().map(|(m, r)| ModelReport::of(m, r)).collect(),
        ubm: UbmDiagnostics {
            iterations: ubm.iterations,
            converged: ubm.converged,
            final_log_likelihood: *ubm.log_likelihood.last().expect("trace is never empty"),
        },
        alpha_recovery,
    };
    Ok(PipelineRun {
        report,
        truth,
        train,
        test,
        evaluations,
    })
}
