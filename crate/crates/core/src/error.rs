use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("space is immutable: every knob domain has a single value")]
    ImmutableSpace,
    #[error("space too large: {size} configurations exceed the cap of {cap}")]
    SpaceTooLarge { size: u64, cap: u64 },

    #[error("bad model dims {0:?}: expected [D, H1, H2, 1] with positive entries")]
    BadDims(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected} scalars, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model stream: {0}")]
    CorruptStream(String),

    #[error("invalid transferable ratio {0}: must lie in (0, 1]")]
    InvalidRatio(f64),
    #[error("threshold partition requires normalized scores")]
    UnnormalizedThreshold,
    #[error("unstable decay: alpha * lambda = {0} must lie in [0, 1)")]
    UnstableDecay(f64),
    #[error("adversary is disabled")]
    AdversaryDisabled,

    #[error("infeasible split: {train} measured trials cannot fill {batches} batches")]
    InfeasibleSplit { train: usize, batches: usize },
    #[error("coefficient of variation undefined: mean is zero")]
    ZeroMean,
    #[error("coefficient of variation needs at least 2 batch means, got {0}")]
    InsufficientBatches(usize),

    #[error("empty dataset")]
    EmptyDataset,
    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),
    #[error("reference strategy {0} missing from the comparison")]
    MissingReferenceStrategy(String),
    #[error("mismatched runs: {0}")]
    MismatchedRuns(String),
    #[error("no metric rows to report")]
    EmptyRows,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Bad user input, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidTask(_)
                | Error::InvalidConfig(_)
                | Error::BadDims(_)
                | Error::InvalidRatio(_)
                | Error::UnnormalizedThreshold
                | Error::UnstableDecay(_)
                | Error::InfeasibleSplit { .. }
                | Error::BudgetInfeasible(_)
                | Error::MissingReferenceStrategy(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
