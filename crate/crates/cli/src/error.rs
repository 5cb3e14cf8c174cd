use palmverify_core::dataset::DatasetError;
use palmverify_core::eval::EvalError;
use palmverify_core::geometry::GeometryError;
use palmverify_core::matching::MatchError;
use palmverify_core::pipeline::PipelineError;
use std::fmt;
use std::path::Path;
use std::process::ExitCode;

/// Failure classes map to stable exit codes: usage 1, data 2, pipeline 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Pipeline(_) => 3,
        })
    }

    /// Data error with the offending file named.
    pub fn at(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Pipeline(m) => write!(f, "pipeline error: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidParameter(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidTarget(_) | EvalError::InvalidDelta(_) => {
                CliError::Usage(e.to_string())
            }
            EvalError::Match(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidThreshold(_) | PipelineError::InvalidOutputSize => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::InvalidSizing { .. } | GeometryError::InvalidCanvas(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
