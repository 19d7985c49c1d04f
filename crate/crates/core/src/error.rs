use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Backend,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("class {class} has {available} instances, need {required}")]
    InsufficientClass {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown metric '{0}' (known: semsim, bleu, rouge_l, meteor, sacrebleu, bleurt, bartscore)")]
    UnknownMetric(String),

    #[error("model backend error: {0}")]
    Backend(String),

    #[error("model '{id}' not found (looked in: {}); set MAPLE_MODEL_CACHE or pass a local directory", display_paths(.searched))]
    ModelUnavailable { id: String, searched: Vec<PathBuf> },

    #[error("incomplete scores, missing {} cell(s): {}", .0.len(), preview(.0))]
    Incomplete(Vec<String>),

    #[error("{count} pair(s) could not be scored by metric '{metric}'")]
    MetricFailures { metric: String, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("missing cache {path}: run `{hint}` first")]
    MissingCache { path: PathBuf, hint: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
}

fn preview(keys: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut out = keys.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > SHOWN {
        out.push_str(", ...");
    }
    out
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownMetric(_) => ErrorKind::Usage,
            Error::Backend(_) | Error::ModelUnavailable { .. } | Error::Tensor(_) => ErrorKind::Backend,
            _ => ErrorKind::Data,
        }
    }
}

/// Attach a path to an io error.
pub(crate) trait IoContext<T> {
    fn with_path(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn with_path(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path.display().to_string(), e))
    }
}
