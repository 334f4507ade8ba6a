use std::io;
use thiserror::Error;
use vulforge::codefeat::FeatureError;
use vulforge::ensembles::EnsembleError;
use vulforge::ingest::IngestError;
use vulforge::learners::LearnerError;
use vulforge::metamodels::MetaError;
use vulforge::metrics::MetricsError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Invalid data: malformed records, bad probability vectors, coverage gaps.
    pub const DATA: i32 = 1;
    /// Invalid configuration or command-line usage.
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    /// A stage ran before the artifacts it depends on exist.
    pub const PROTOCOL_ORDER: i32 = 4;
    /// `verify` found a mismatch.
    pub const VERIFY: i32 = 5;
    /// External outputs for the next step have not been delivered yet.
    pub const PENDING: i32 = 75;
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0   success
  1   data error (malformed records, invalid probabilities, coverage mismatch)
  2   config error (bad config file, flag or hyperparameter)
  3   io error
  4   protocol order error (a stage ran before its inputs were produced)
  5   verify found a mismatch
  75  pending: waiting for external predictions (rerun once they exist)";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("protocol order error: {0}")]
    ProtocolOrder(String),
    #[error("pending: {0}")]
    Pending(String),
    #[error("verification failed:\n{0}")]
    Verify(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::ProtocolOrder(_) => exit::PROTOCOL_ORDER,
            CliError::Pending(_) => exit::PENDING,
            CliError::Verify(_) => exit::VERIFY,
            CliError::Data(_) => exit::DATA,
        }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        match e {
            LearnerError::Io { path, source } => CliError::Io { path, source },
            LearnerError::ProtocolOrder(m) => CliError::ProtocolOrder(m),
            e @ (LearnerError::InvalidConfig(_) | LearnerError::ZeroEpochs | LearnerError::Feature(_)) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::RoundPending { round, path } => {
                CliError::Pending(format!("round {round} needs {path}"))
            }
            EnsembleError::InvalidConfig(m) => CliError::Config(m),
            EnsembleError::Learner(e) => e.into(),
            EnsembleError::Meta(e) => e.into(),
            EnsembleError::Ingest(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Config(e.to_string())
    }
}
