use std::path::Path;

use clickbias::baselines::UbmError;
use clickbias::biascurve::CurveError;
use clickbias::clicklog::{LogError, SplitError};
use clickbias::pipeline::PipelineError;
use clickbias::propagation::PropagationError;
use clickbias::solver::SolverError;
use clickbias::synthgen::SynthError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report {
            status: &'static str,
            kind: &'static str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Report {
            status: "error",
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error report serializes")
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub fn at(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<SolverError> for CliError {
    fn from(err: SolverError) -> Self {
        match err {
            SolverError::Singular(_) => CliError::Numeric(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<SplitError> for CliError {
    fn from(err: SplitError) -> Self {
        CliError::Usage(err.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(err: SynthError) -> Self {
        CliError::Usage(err.to_string())
    }
}

impl From<UbmError> for CliError {
    fn from(err: UbmError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<CurveError> for CliError {
    fn from(err: CurveError) -> Self {
        CliError::Numeric(err.to_string())
    }
}

impl From<PropagationError> for CliError {
    fn from(err: PropagationError) -> Self {
        match err {
            PropagationError::TooDense { .. } => CliError::Numeric(err.to_string()),
            PropagationError::BadPathLength => CliError::Usage(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<LogError> for CliError {
    fn from(err: LogError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Synth(e) => e.into(),
            PipelineError::Split(e) => e.into(),
            PipelineError::Eh(e) => e.into(),
            PipelineError::Ubm(e) => e.into(),
            PipelineError::NoTriples => CliError::Data(err.to_string()),
        }
    }
}
