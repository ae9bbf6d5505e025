//! Click models with query-specific position bias.
//!
//! Click logs are aggregated into `(query, document, position)` click-through
//! rates, and each query is fitted with `ctr = goodness(doc) * bias(position)`
//! by least squares in the log domain. Baseline models, evaluation measures,
//! bias-curve analysis, a cycle test of the document-independence assumption,
//! goodness propagation across similar queries, and a session simulator are
//! included.

pub mod clicklog;
pub mod graph;
pub mod solver;
pub mod baselines;
pub mod biascurve;
pub mod evaluation;
pub mod cycletest;
pub mod propagation;
pub mod synthgen;
pub mod artifact;
pub mod pipeline;

pub use clicklog::{
    aggregate, parse_session_log, split_train_test, AggregateOptions, SessionLog, SessionRecord,
    Triple, TripleTable,
};
pub use graph::{build_graph, BipartiteGraph, ComponentPartition, Cycle};
pub use solver::{fit_all, fit_query, FitAll, FitOptions, QueryModel, SolverError, Uncovered, Weighting};
pub use baselines::{fit_global_eh, fit_ubm, GlobalEhModel, UbmModel, UbmOptions};
pub use evaluation::{evaluate, perplexity, EvalReport, EvalSummary};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
pub use synthgen::{gen_ground_truth, simulate_sessions, GenConfig, GroundTruth, ModelKind};
