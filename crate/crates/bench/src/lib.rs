//! Fixtures shared by the benchmarks.

use clickbias::synthgen::exact_ctr_table;
use clickbias::{gen_ground_truth, simulate_sessions, GenConfig, GroundTruth, ModelKind, SessionLog, TripleTable};

pub fn truth(n_queries: usize, kind: ModelKind, seed: u64) -> GroundTruth {
    gen_ground_truth(&GenConfig {
        n_queries,
        kind,
        seed,
        ..GenConfig::default()
    })
    .expect("default generator settings are valid")
}

pub fn exact_table(n_queries: usize) -> TripleTable {
    exact_ctr_table(&truth(n_queries, ModelKind::Qseh, 1))
}

pub fn sessions(n_queries: usize, per_query: usize, kind: ModelKind) -> SessionLog {
    simulate_sessions(&truth(n_queries, kind, 2), per_query, 3)
}
