use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column '{0}' not found")]
    MissingLabelColumn(String),
    #[error("label value '{value}' at row {row} is not binary")]
    BadLabel { row: usize, value: String },
    #[error("label missing at row {0}")]
    MissingLabel(usize),
    #[error("feature '{0}' has no observed entries")]
    EmptyFeature(String),
    #[error("duplicate feature name '{0}'")]
    DuplicateFeature(String),
    #[error("datasets share no common features")]
    NoCommonFeatures,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("source must have at least as many rows as target ({source_rows} < {target_rows})")]
    SourceSmallerThanTarget {
        source_rows: usize,
        target_rows: usize,
    },
    #[error("label class {label} has {target_rows} target rows but only {source_rows} source rows")]
    SupervisedPairingInfeasible {
        label: u8,
        source_rows: usize,
        target_rows: usize,
    },
    #[error("matrix is not positive-definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("requested {requested} components but only {available} available")]
    RankTooLarge { requested: usize, available: usize },
    #[error("degenerate view: {0}")]
    DegenerateView(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
