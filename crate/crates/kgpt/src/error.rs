use std::path::PathBuf;

use kgpt_core::corpus::CorpusError;
use kgpt_core::metrics::MetricsError;
use kgpt_core::model::ModelError;
use kgpt_core::numerics::NumericsError;
use kgpt_core::record::RecordError;
use kgpt_core::tokenizer::TokenizerError;
use kgpt_core::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{failed} of {total} gradient checks exceed the tolerance")]
    GradCheckFailed { failed: usize, total: usize },
    #[error("no hypothesis for reference id {0:?}")]
    MissingHypothesis(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Model(ModelError::Numerics(e))
    }
}

/// Innermost variant name of a `Debug` rendering, skipping the wrapper
/// variants that only forward another module's error.
fn variant_name(debug: &str) -> String {
    const WRAPPERS: [&str; 6] = [
        "Model",
        "Numerics",
        "Metrics",
        "Record",
        "Corpus",
        "Tokenizer",
    ];
    let mut rest = debug;
    loop {
        let end = rest
            .find(|c: char| !c.is_alphanumeric() && c != '_')
            .unwrap_or(rest.len());
        let name = &rest[..end];
        if WRAPPERS.contains(&name) && rest[end..].starts_with('(') {
            rest = &rest[end + 1..];
        } else {
            return name.to_string();
        }
    }
}

impl CliError {
    /// Typed name printed on stderr. Errors from the core crate keep their
    /// own variant names.
    pub fn name(&self) -> String {
        match self {
            CliError::Usage(_) => "UsageError".into(),
            CliError::Io { .. } => "IoError".into(),
            CliError::Parse { .. } => "ParseError".into(),
            CliError::Format { .. } => "FormatError".into(),
            CliError::GradCheckFailed { .. } => "GradCheckFailed".into(),
            CliError::MissingHypothesis(_) => "MissingHypothesis".into(),
            CliError::Record(e) => variant_name(&format!("{e:?}")),
            CliError::Corpus(e) => variant_name(&format!("{e:?}")),
            CliError::Tokenizer(e) => variant_name(&format!("{e:?}")),
            CliError::Model(e) => variant_name(&format!("{e:?}")),
            CliError::Train(e) => variant_name(&format!("{e:?}")),
            CliError::Metrics(e) => variant_name(&format!("{e:?}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
