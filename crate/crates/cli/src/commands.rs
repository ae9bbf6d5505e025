use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use clickbias::artifact::{EhFile, ModelFile, Provenance, QsehFile, UbmFile};
use clickbias::baselines::{fit_global_eh, fit_ubm, ubm_triple_marginals, GlobalEhModel, HeldOut, UbmModel, UbmOptions};
use clickbias::biascurve::{category_curves, classify_vectors, full_coverage_vectors, REFERENCE_CURVE};
use clickbias::clicklog::{
    aggregate, parse_session_log, read_triples, split_train_test, write_triples, AggregateOptions, SessionLog,
    TripleTable,
};
use clickbias::cycletest::{hypothesis_report, CycleCaps};
use clickbias::evaluation::{
    default_cdf_grid, default_frequency_edges, error_cdf, evaluate, group_eval, EvalSummary, GroupSummary, Grouping,
};
use clickbias::graph::{build_graph, cyclomatic_number};
use clickbias::pipeline::{run_pipeline, PipelineConfig, StageSeeds, PERPLEXITY_DEFINITION};
use clickbias::propagation::{propagate, GoodnessMatrix, PropagationOptions};
use clickbias::solver::{fit_all, FitAll, FitOptions, Weighting};
use clickbias::synthgen::{
    gen_ground_truth, simulate_sessions, BiasFamily, GenConfig, GroundTruth, ModelKind, RotationPolicy,
};
use serde::Serialize;

use crate::error::CliError;
use crate::output::{csv_bytes, Staged};
use crate::{
    AggregateArgs, ClassifyArgs, Command, ComponentsArgs, CurvesArgs, CyclesArgs, EvalArgs, FitArgs, FitUbmArgs,
    Format, GenArgs, PipelineArgs, PropagateArgs, Rotation, SplitArgs, WeightingArg,
};

pub fn run(command: Command, format: Format) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => gen(&a),
        Command::Aggregate(a) => aggregate_cmd(&a),
        Command::Split(a) => split(&a),
        Command::Fit(a) => fit(&a),
        Command::FitEh(a) => fit_eh(&a),
        Command::FitUbm(a) => fit_ubm_cmd(&a),
        Command::Eval(a) => eval(&a, format),
        Command::Curves(a) => curves(&a),
        Command::Classify(a) => classify(&a),
        Command::Cycles(a) => cycles(&a, format),
        Command::Components(a) => components(&a),
        Command::Propagate(a) => propagate_cmd(&a),
        Command::Pipeline(a) => pipeline(&a, format),
    }
}

fn provenance(format: &str, command: &str, seed: Option<u64>, args: &impl Serialize) -> Provenance {
    Provenance::new(
        format,
        command,
        seed,
        serde_json::to_value(args).expect("arguments serialize"),
    )
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn read_sessions(path: &Path) -> Result<SessionLog, CliError> {
    parse_session_log(open(path)?).map_err(|e| CliError::at(path, e))
}

fn read_table(path: &Path) -> Result<TripleTable, CliError> {
    read_triples(open(path)?).map_err(|e| CliError::at(path, e))
}

fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::at(path, e))
}

fn read_qseh(path: &Path) -> Result<FitAll, CliError> {
    match read_model(path)? {
        ModelFile::Qseh(file) => Ok(file.to_fits()),
        other => Err(CliError::at(
            path,
            format!("expected a qseh model, found {}", other.kind()),
        )),
    }
}

fn fit_options(w: WeightingArg) -> FitOptions {
    FitOptions {
        weighting: match w {
            WeightingArg::Unweighted => Weighting::Unweighted,
            WeightingArg::Impressions => Weighting::Impressions,
        },
    }
}

fn comment_lines(out: &mut impl Write, provenance: &Provenance) -> std::io::Result<()> {
    for line in provenance.header_lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TruthFile<'a> {
    provenance: Provenance,
    truth: &'a GroundTruth,
}

fn gen(a: &GenArgs) -> Result<(), CliError> {
    let kind: ModelKind = a.model.parse()?;
    let bias = match a.global_alpha {
        Some(alpha) => BiasFamily::Global { alpha },
        None => BiasFamily::ScaledReference {
            alpha_min: a.alpha_range.0,
            alpha_max: a.alpha_range.1,
        },
    };
    let seeds = StageSeeds::derive(a.seed);
    let config = GenConfig {
        n_queries: a.queries,
        docs_per_query: a.docs,
        n_positions: a.positions,
        kind,
        bias,
        goodness_range: a.goodness_range,
        shared_pool: a.shared_pool,
        rotation: match a.rotation {
            Rotation::Cyclic => RotationPolicy::RandomCyclic,
            Rotation::Fixed => RotationPolicy::Fixed,
        },
        seed: seeds.truth,
    };
    let truth = gen_ground_truth(&config)?;
    let log = simulate_sessions(&truth, a.sessions, seeds.sessions);
    log::info!("simulated {} sessions", log.len());

    let mut staged = Staged::new();
    let prov = provenance("clickbias-sessions", "gen", Some(a.seed), a);
    staged.write(&a.out, |w| {
        comment_lines(w, &prov)?;
        log.write_tsv(w)
    })?;
    if let Some(path) = &a.truth {
        let file = TruthFile {
            provenance: provenance("clickbias-truth", "gen", Some(a.seed), a),
            truth: &truth,
        };
        staged.json(path, &file)?;
    }
    staged.commit()
}

fn aggregate_cmd(a: &AggregateArgs) -> Result<(), CliError> {
    if a.min_impressions == 0 {
        return Err(CliError::Usage("--min-impressions must be at least 1".into()));
    }
    let log = read_sessions(&a.input)?;
    let table = aggregate(
        &log,
        AggregateOptions {
            min_impressions: a.min_impressions,
            drop_zero_clicks: !a.keep_zero_clicks,
        },
    );
    log::info!("{} sessions -> {} triples", log.len(), table.num_triples());
    let prov = provenance("clickbias-triples", "aggregate", None, a);
    let mut staged = Staged::new();
    staged.write(&a.out, |w| write_triples(w, &table, &prov.header_lines()))?;
    staged.commit()
}

fn split(a: &SplitArgs) -> Result<(), CliError> {
    let table = read_table(&a.input)?;
    let (train, test) = split_train_test(&table, a.test_fraction, a.seed)?;
    log::info!("{} train / {} test triples", train.num_triples(), test.num_triples());
    let header = provenance("clickbias-triples", "split", Some(a.seed), a).header_lines();
    let mut staged = Staged::new();
    staged.write(&a.train, |w| write_triples(w, &train, &header))?;
    staged.write(&a.test, |w| write_triples(w, &test, &header))?;
    staged.commit()
}

fn fit(a: &FitArgs) -> Result<(), CliError> {
    let table = read_table(&a.input)?;
    if table.is_empty() {
        log::warn!("{}: no triples; writing an empty model", a.input.display());
    }
    let fits = fit_all(&table, &fit_options(a.weighting));
    if !fits.failures.is_empty() {
        log::warn!("{} queries could not be fitted", fits.failures.len());
    }
    let file = ModelFile::Qseh(QsehFile::new(provenance("clickbias-model", "fit", None, a), &fits));
    let mut staged = Staged::new();
    staged.json(&a.out, &file)?;
    staged.commit()
}

fn fit_eh(a: &FitArgs) -> Result<(), CliError> {
    let table = read_table(&a.input)?;
    let model = if table.is_empty() {
        log::warn!("{}: no triples; writing an empty model", a.input.display());
        GlobalEhModel {
            log_goodness: BTreeMap::new(),
            log_bias: BTreeMap::new(),
            components: 0,
            mu: 0.0,
            residual: 0.0,
        }
    } else {
        fit_global_eh(&table, &fit_options(a.weighting))?
    };
    let file = ModelFile::Eh(EhFile::new(provenance("clickbias-model", "fit-eh", None, a), &model));
    let mut staged = Staged::new();
    staged.json(&a.out, &file)?;
    staged.commit()
}

fn fit_ubm_cmd(a: &FitUbmArgs) -> Result<(), CliError> {
    let log = read_sessions(&a.input)?;
    let held_out: Option<HeldOut> = match &a.held_out {
        Some(path) => Some(
            read_table(path)?
                .triples()
                .map(|t| (t.query_id.clone(), t.doc_id.clone(), t.position))
                .collect(),
        ),
        None => None,
    };
    let options = UbmOptions {
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let (model, marginals) = if log.is_empty() {
        log::warn!("{}: no sessions; writing an empty model", a.input.display());
        let empty = UbmModel {
            n_positions: 0,
            goodness: BTreeMap::new(),
            gamma: Vec::new(),
            gamma_observed: Vec::new(),
            iterations: 0,
            converged: true,
            log_likelihood: Vec::new(),
        };
        (empty, BTreeMap::new())
    } else {
        let model = fit_ubm(&log, &options, held_out.as_ref())?;
        if !model.converged {
            log::warn!("EM stopped after {} iterations without converging", model.iterations);
        }
        let marginals = ubm_triple_marginals(&model, &log);
        (model, marginals)
    };
    let prov = provenance("clickbias-model", "fit-ubm", None, a);
    let file = ModelFile::Ubm(UbmFile::new(prov, &model, &marginals));
    let mut staged = Staged::new();
    staged.json(&a.out, &file)?;
    staged.commit()
}

#[derive(Serialize)]
struct EvalOutput {
    provenance: Provenance,
    model: String,
    model_provenance: Provenance,
    perplexity_definition: String,
    summary: EvalSummary,
    uncovered: usize,
    by_position: Vec<GroupSummary>,
    by_frequency: Vec<GroupSummary>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    grouping: &'a str,
    label: &'a str,
    count: usize,
    mean_relative_error: f64,
    mean_under_prediction: f64,
    under_count: usize,
    mean_over_prediction: f64,
    over_count: usize,
    perplexity: f64,
    clamped_predictions: usize,
}

impl<'a> SummaryRow<'a> {
    fn new(grouping: &'a str, label: &'a str, s: &EvalSummary) -> Self {
        Self {
            grouping,
            label,
            count: s.count,
            mean_relative_error: s.mean_relative_error,
            mean_under_prediction: s.mean_under_prediction,
            under_count: s.under_count,
            mean_over_prediction: s.mean_over_prediction,
            over_count: s.over_count,
            perplexity: s.perplexity,
            clamped_predictions: s.clamped_predictions,
        }
    }
}

fn eval(a: &EvalArgs, format: Format) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let test = read_table(&a.test)?;
    let predictor = model.predictor();
    let report = evaluate(&test, |t| predictor.predict(&t.query_id, &t.doc_id, t.position));
    if report.uncovered > 0 {
        log::warn!("{} test triples are not covered by the model", report.uncovered);
    }
    if report.records.is_empty() {
        log::warn!("no test triple could be scored");
    }
    let prov = provenance("clickbias-eval-report", "eval", None, a);
    let output = EvalOutput {
        provenance: prov.clone(),
        model: model.kind().to_owned(),
        model_provenance: model.provenance().clone(),
        perplexity_definition: PERPLEXITY_DEFINITION.to_owned(),
        summary: report.summary.clone(),
        uncovered: report.uncovered,
        by_position: group_eval(&report, &Grouping::Position),
        by_frequency: group_eval(&report, &Grouping::Frequency(default_frequency_edges())),
    };

    let mut staged = Staged::new();
    match format {
        Format::Json => staged.json(&a.report, &output)?,
        Format::Csv => {
            let mut rows = vec![SummaryRow::new("all", "all", &output.summary)];
            rows.extend(output.by_position.iter().map(|g| SummaryRow::new("position", &g.label, &g.summary)));
            rows.extend(output.by_frequency.iter().map(|g| SummaryRow::new("frequency", &g.label, &g.summary)));
            staged.csv(&a.report, &prov, rows)?;
        }
    }
    if let Some(path) = &a.cdf {
        let cdf = if report.records.is_empty() {
            Vec::new()
        } else {
            error_cdf(&report.relative_errors(), &default_cdf_grid()).expect("records are non-empty")
        };
        staged.csv(path, &prov, cdf)?;
    }
    if let Some(path) = &a.records {
        staged.csv(path, &prov, &report.records)?;
    }
    staged.commit()
}

#[derive(Serialize)]
struct CurveRow {
    category: usize,
    queries: usize,
    position: usize,
    median: f64,
    normalized: Option<f64>,
}

fn curves(a: &CurvesArgs) -> Result<(), CliError> {
    if a.categories == 0 {
        return Err(CliError::Usage("--categories must be at least 1".into()));
    }
    let fits = read_qseh(&a.models)?;
    let vectors = full_coverage_vectors(fits.models.values(), a.positions);
    log::info!("{} of {} queries cover positions 1..={}", vectors.len(), fits.models.len(), a.positions);
    if vectors.is_empty() {
        log::warn!("no query covers every position; writing an empty table");
    }
    let categories = if vectors.is_empty() {
        Vec::new()
    } else {
        category_curves(&vectors, a.categories)?
    };
    let rows = categories.iter().flat_map(|c| {
        c.median.iter().enumerate().map(move |(j, &m)| CurveRow {
            category: c.category + 1,
            queries: c.queries.len(),
            position: j + 1,
            median: m,
            normalized: c.normalized.as_ref().map(|n| n[j]),
        })
    });
    let mut staged = Staged::new();
    staged.csv(&a.out, &provenance("clickbias-curves", "curves", None, a), rows)?;
    staged.commit()
}

fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let fits = read_qseh(&a.models)?;
    let vectors = full_coverage_vectors(fits.models.values(), REFERENCE_CURVE.len() as u32);
    if vectors.is_empty() {
        log::warn!("no query covers positions 1..=10; writing an empty table");
    }
    let labels = classify_vectors(&vectors, a.threshold)?;
    let mut staged = Staged::new();
    staged.csv(&a.out, &provenance("clickbias-labels", "classify", None, a), labels)?;
    staged.commit()
}

fn query_graphs(table: &TripleTable) -> Result<Vec<(String, clickbias::BipartiteGraph)>, CliError> {
    table
        .iter()
        .map(|(q, entry)| Ok((q.to_owned(), build_graph(&entry.triples).map_err(|e| CliError::Data(e.to_string()))?)))
        .collect()
}

#[derive(Serialize)]
struct LengthRow {
    length: usize,
    count: usize,
    abs_sum_min: f64,
    abs_sum_q1: f64,
    abs_sum_median: f64,
    abs_sum_q3: f64,
    abs_sum_max: f64,
    abs_ratio_q1: Option<f64>,
    abs_ratio_median: Option<f64>,
    abs_ratio_q3: Option<f64>,
    rms_ratio: Option<f64>,
    reference_ratio: f64,
}

#[derive(Serialize)]
struct CyclesSummary<'a> {
    provenance: Provenance,
    report: &'a clickbias::cycletest::HypothesisReport,
}

fn cycles(a: &CyclesArgs, format: Format) -> Result<(), CliError> {
    if a.max_len < 4 || a.max_len % 2 != 0 {
        return Err(CliError::Usage("--max-len must be even and at least 4".into()));
    }
    let table = read_table(&a.input)?;
    let graphs = query_graphs(&table)?;
    let caps = CycleCaps {
        max_length: a.max_len,
        max_count: a.max_count,
    };
    let (report, stats) = hypothesis_report(&graphs, caps);
    if report.empty {
        log::warn!("no cycles found");
    }
    if !report.truncated_queries.is_empty() {
        log::warn!(
            "cycle search hit --max-count for {} queries",
            report.truncated_queries.len()
        );
    }
    let prov = provenance("clickbias-cycles", "cycles", None, a);
    let mut staged = Staged::new();
    staged.csv(&a.out, &prov, &stats)?;
    if let Some(path) = &a.summary {
        match format {
            Format::Json => staged.json(
                path,
                &CyclesSummary {
                    provenance: prov.clone(),
                    report: &report,
                },
            )?,
            Format::Csv => {
                let rows = report.lengths.iter().map(|l| LengthRow {
                    length: l.length,
                    count: l.count,
                    abs_sum_min: l.abs_sum.min,
                    abs_sum_q1: l.abs_sum.q1,
                    abs_sum_median: l.abs_sum.median,
                    abs_sum_q3: l.abs_sum.q3,
                    abs_sum_max: l.abs_sum.max,
                    abs_ratio_q1: l.abs_ratio.map(|q| q.q1),
                    abs_ratio_median: l.abs_ratio.map(|q| q.median),
                    abs_ratio_q3: l.abs_ratio.map(|q| q.q3),
                    rms_ratio: l.rms_ratio,
                    reference_ratio: report.reference_ratio,
                });
                staged.csv(path, &prov, rows)?;
            }
        }
    }
    staged.commit()
}

#[derive(Serialize)]
struct ComponentRow {
    query: String,
    frequency: u64,
    docs: usize,
    positions: usize,
    edges: usize,
    components: usize,
    anchored: bool,
    largest_positions: usize,
    largest_nodes: usize,
    cyclomatic_number: usize,
}

fn components(a: &ComponentsArgs) -> Result<(), CliError> {
    let table = read_table(&a.input)?;
    let graphs = query_graphs(&table)?;
    let rows = graphs.iter().map(|(q, g)| {
        let partition = g.connected_components();
        let sizes = partition.sizes();
        let (largest_positions, largest_nodes) = partition
            .largest()
            .map_or((0, 0), |c| (sizes[c].1, sizes[c].0 + sizes[c].1));
        ComponentRow {
            query: q.clone(),
            frequency: table.frequency(q).unwrap_or(0),
            docs: g.docs().len(),
            positions: g.positions().len(),
            edges: g.edges().len(),
            components: partition.count,
            anchored: partition.anchored.is_some(),
            largest_positions,
            largest_nodes,
            cyclomatic_number: cyclomatic_number(g),
        }
    });
    let mut staged = Staged::new();
    staged.csv(&a.out, &provenance("clickbias-components", "components", None, a), rows)?;
    staged.commit()
}

fn propagate_cmd(a: &PropagateArgs) -> Result<(), CliError> {
    let fits = read_qseh(&a.model)?;
    let matrix = GoodnessMatrix::from_models(&fits)?;
    let options = PropagationOptions {
        path_length: a.path_length,
        row_stochastic: a.row_stochastic,
        max_entries: a.max_entries,
    };
    let result = propagate(&matrix, &options)?;
    log::info!(
        "{} scores, {} inferred",
        result.scores.nnz(),
        result.inferred_count()
    );
    let prov = provenance("clickbias-propagated", "propagate", None, a);
    let mut staged = Staged::new();
    staged.write(&a.out, |w| {
        comment_lines(w, &prov)?;
        for e in result.entries() {
            writeln!(w, "{}\t{}\t{}\t{}", e.query, e.doc, e.score, e.provenance.as_str())?;
        }
        Ok(())
    })?;
    staged.commit()
}

#[derive(Serialize)]
struct ModelRow<'a> {
    model: &'a str,
    count: usize,
    uncovered: usize,
    mean_relative_error: f64,
    mean_under_prediction: f64,
    mean_over_prediction: f64,
    perplexity: f64,
}

fn pipeline(a: &PipelineArgs, format: Format) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_reader(open(path)?).map_err(|e| CliError::at(path, e))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let g = &mut config.generator;
    if let Some(v) = a.queries {
        g.n_queries = v;
    }
    if let Some(v) = a.docs {
        g.docs_per_query = v;
    }
    if let Some(v) = a.positions {
        g.n_positions = v;
    }
    if let Some((lo, hi)) = a.alpha_range {
        g.bias = BiasFamily::ScaledReference { alpha_min: lo, alpha_max: hi };
    }
    if let Some(kind) = &a.model {
        g.kind = kind.parse()?;
    }
    if let Some(v) = a.sessions {
        config.sessions_per_query = v;
    }
    if let Some(v) = a.test_fraction {
        config.test_fraction = v;
    }

    let run = run_pipeline(&config)?;
    let report = run.report;
    let bytes = match format {
        Format::Json => {
            let mut text = serde_json::to_vec_pretty(&report).expect("report serializes");
            text.push(b'\n');
            text
        }
        Format::Csv => {
            let rows = report.models.iter().map(|m| ModelRow {
                model: &m.model,
                count: m.summary.count,
                uncovered: m.uncovered,
                mean_relative_error: m.summary.mean_relative_error,
                mean_under_prediction: m.summary.mean_under_prediction,
                mean_over_prediction: m.summary.mean_over_prediction,
                perplexity: m.summary.perplexity,
            });
            csv_bytes(&report.provenance, rows).map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    match &a.out {
        Some(path) => {
            let mut staged = Staged::new();
            staged.write(path, |w| w.write_all(&bytes))?;
            staged.commit()
        }
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}
