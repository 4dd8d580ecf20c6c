use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{skipped} of {total} log lines were malformed; input is probably not a click log")]
    MostlyMalformed { skipped: usize, total: usize },

    #[error("unknown query {0:?}")]
    UnknownQuery(String),

    #[error("{q2:?} is not a co-topic expansion of {q1:?}")]
    NotCoTopic { q1: String, q2: String },

    #[error("similarity {0} is outside [0, 1]")]
    SimilarityOutOfRange(f64),

    #[error("invalid category path {0:?}")]
    InvalidCategoryPath(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("need at least {min} training rows, got {got}")]
    TooFewRows { min: usize, got: usize },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("paired samples differ in length ({0} vs {1})")]
    UnpairedSamples(usize, usize),

    #[error("wilcoxon test needs at least {min} nonzero differences, got {got}")]
    TooFewDifferences { min: usize, got: usize },

    #[error("cannot average an empty set of rankings")]
    EmptyRankingSet,

    #[error("need {needed} negative pairs but only {available} are available (shortfall {})", needed - available)]
    NegativeShortfall { needed: usize, available: usize },

    #[error("fold {0} has no queries")]
    DegenerateFold(usize),

    #[error("{context}: line {line}: {message}")]
    Format {
        context: &'static str,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(context: &'static str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            context,
            line,
            message: message.into(),
        }
    }
}
