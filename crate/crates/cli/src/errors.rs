use primetrace::lm::LmError;
use primetrace::priming::PrimingError;
use primetrace::stats::StatsError;
use primetrace::tokenizer::TokenizerError;

/// Exit codes: 2 config, 3 data, 4 numeric, 5 interrupted/locked.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config file, invalid or inconsistent settings.
    #[error("{0}")]
    Config(String),
    /// Missing, stale, or corrupt files on disk.
    #[error("{0}")]
    Data(String),
    /// Non-finite numbers or failed numerical optimization.
    #[error("{0}")]
    Numeric(String),
    /// Ctrl-C, or another command holds the output directory.
    #[error("{0}")]
    Interrupted(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Interrupted(_) => 5,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Interrupted(_) => "interrupted",
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::InvalidConfig(_) => CliError::Config(e.to_string()),
            LmError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io(_)
            | TokenizerError::Malformed(_)
            | TokenizerError::BadVersion { .. }
            | TokenizerError::UnknownId(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PrimingError> for CliError {
    fn from(e: PrimingError) -> Self {
        match e {
            PrimingError::Checkpoint(ref msg) if msg == "interrupted" => {
                CliError::Interrupted("interrupted; rerun sweep to resume".into())
            }
            PrimingError::BadCheckpointList | PrimingError::ContextOverflow { .. } => {
                CliError::Config(e.to_string())
            }
            PrimingError::NonFiniteLogProb => CliError::Numeric(e.to_string()),
            PrimingError::Lm(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::TooFewLevels(_) | StatsError::MissingBaseline { .. } => {
                CliError::Config(e.to_string())
            }
            StatsError::NonConvergence | StatsError::InvalidPValue(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// IO error tied to a path; these are always data-class failures.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot access {}: {e}", path.display()))
}
