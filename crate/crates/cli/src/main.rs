use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod error;
mod output;


/// Click models with query-specific position bias: simulate, aggregate, fit,
/// evaluate and analyze click logs.
#[derive(Debug, Parser)]
#[command(name = "clickbias", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of report outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Cyclic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingArg {
    Unweighted,
    Impressions,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ground truth and simulate click sessions.
    Gen(GenArgs),
    /// Aggregate sessions into (query, doc, position) triples.
    Aggregate(AggregateArgs),
    /// Split triples into training and test sets.
    Split(SplitArgs),
    /// Fit per-query goodness and position bias.
    Fit(FitArgs),
    /// Fit the global-bias examination model.
    FitEh(FitArgs),
    /// Fit the user browsing model by EM.
    FitUbm(FitUbmArgs),
    /// Score a model on held-out triples.
    Eval(EvalArgs),
    /// Per-category median and normalized bias curves.
    Curves(CurvesArgs),
    /// Label queries navigational or informational.
    Classify(ClassifyArgs),
    /// Alternating cycle sums of every query graph.
    Cycles(CyclesArgs),
    /// Connected-component statistics of every query graph.
    Components(ComponentsArgs),
    /// Propagate goodness to unseen (query, doc) pairs.
    Propagate(PropagateArgs),
    /// Run gen, aggregate, split, fit and eval end to end.
    Pipeline(PipelineArgs),
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo <= hi) {
        return Err(format!("range {s:?} is empty"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    /// Documents per query.
    #[arg(long, default_value_t = 15)]
    pub docs: usize,
    #[arg(long, default_value_t = 10)]
    pub positions: usize,
    /// qseh, eh, cascade, dcm or ubm.
    #[arg(long, default_value = "qseh")]
    pub model: String,
    /// Per-query alpha drawn uniformly from LO:HI.
    #[arg(long, value_parser = parse_range, default_value = "0.3:3", conflicts_with = "global_alpha")]
    pub alpha_range: (f64, f64),
    /// One alpha shared by every query.
    #[arg(long)]
    pub global_alpha: Option<f64>,
    #[arg(long, value_parser = parse_range, default_value = "0.05:0.95")]
    pub goodness_range: (f64, f64),
    /// Draw documents from a pool of this size shared by all queries.
    #[arg(long)]
    pub shared_pool: Option<usize>,
    #[arg(long, value_enum, default_value_t = Rotation::Cyclic)]
    pub rotation: Rotation,
    /// Sessions per query.
    #[arg(long, default_value_t = 1000)]
    pub sessions: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generating parameters as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub min_impressions: u64,
    /// Keep triples that were never clicked.
    #[arg(long)]
    pub keep_zero_clicks: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = WeightingArg::Unweighted)]
    pub weighting: WeightingArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FitUbmArgs {
    /// Session log.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Triples whose impressions are left out of the fit.
    #[arg(long)]
    pub held_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Relative-error CDF as CSV.
    #[arg(long)]
    pub cdf: Option<PathBuf>,
    /// Per-triple predictions as CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CurvesArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub categories: usize,
    #[arg(long, default_value_t = 10)]
    pub positions: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = clickbias::biascurve::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CyclesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Cycles enumerated per query at most.
    #[arg(long, default_value_t = 100_000)]
    pub max_count: usize,
    /// Per-cycle statistics as CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-length distribution summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ComponentsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PropagateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Path parameter of (GG')^l G.
    #[arg(long = "l", default_value_t = 1)]
    pub path_length: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Normalize similarity rows to sum to one.
    #[arg(long)]
    pub row_stochastic: bool,
    /// Largest number of non-zeros a product may hold.
    #[arg(long, default_value_t = 50_000_000)]
    pub max_entries: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// Master seed [default: 7, or the seed in --config].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pipeline configuration as JSON; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub positions: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long, value_parser = parse_range)]
    pub alpha_range: Option<(f64, f64)>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// qseh, eh, cascade, dcm or ubm.
    #[arg(long)]
    pub model: Option<String>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {err}");
        }
    }
    match commands::run(cli.command, cli.format) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("0:3").unwrap(), (0.0, 3.0));
        assert_eq!(parse_range("0.3 : 3").unwrap(), (0.3, 3.0));
        assert!(parse_range("3:0").is_err());
        assert!(parse_range("3").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
