use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the stage that raises them. [`Error::is_input_error`]
/// separates bad inputs (exit code 2 on the command line) from failures during
/// computation (exit code 1).
#[derive(Debug, Error)]
pub enum Error {
    // store
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (expected \"<f4\" or \"<i8\")")]
    UnsupportedDtype(String),
    #[error("fortran-order payloads are not supported")]
    FortranOrder,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data: expected {expected} payload bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("negative activation {value} at row {row}, channel {channel}")]
    NegativeActivations { row: usize, channel: usize, value: f32 },
    #[error("invalid prediction samples: {0}")]
    InvalidPredictions(String),
    #[error("invalid head parameters: {0}")]
    InvalidHead(String),
    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    // uncertainty
    #[error("prediction sample set is empty")]
    EmptySamples,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // grouping
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("degenerate data: all scores lie within 1e-12 of each other")]
    DegenerateData,

    // concepts
    #[error("requested {requested} concepts but the input supports at most {max}")]
    RankTooHigh { requested: usize, max: usize },
    #[error("empty input matrix")]
    EmptyInput,
    #[error("item {0} has no segments")]
    EmptyItem(String),
    #[error("concept {concept} out of range (bank has {available})")]
    ConceptOutOfRange { concept: usize, available: usize },

    // importance
    #[error("evaluation function returned a non-finite value at design row {0}")]
    NonFiniteEvaluation(usize),

    // strategies
    #[error("flag set is empty")]
    EmptyFlagSet,
    #[error("flagged concept {0} does not belong to the uncertain concept bank")]
    FlagNotInUncertainBank(usize),
    #[error("missing ground-truth flags: {0}")]
    MissingTruthFlags(String),
    #[error("need at least 5 nonzero paired differences, found {0}")]
    TooFewPairs(usize),
    #[error("input vector is constant")]
    ConstantInput,
    #[error("missing group attribute for item {0}")]
    MissingGroupAttr(String),

    // synth / config
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing run artifact {}", .0.display())]
    MissingRunArtifacts(PathBuf),
    #[error("address {0} is already in use")]
    AddrInUse(String),
}

impl Error {
    /// Wraps an I/O failure; `NotFound` becomes [`Error::MissingFile`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in structured error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::FortranOrder => "FortranOrder",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::TrailingData { .. } => "TrailingData",
            Error::MissingFile(_) => "MissingFile",
            Error::InvalidManifest(_) => "InvalidManifest",
            Error::InconsistentShapes(_) => "InconsistentShapes",
            Error::NegativeActivations { .. } => "NegativeActivations",
            Error::InvalidPredictions(_) => "InvalidPredictions",
            Error::InvalidHead(_) => "InvalidHead",
            Error::Io { .. } => "IoFailure",
            Error::Json { .. } => "JsonError",
            Error::EmptySamples => "EmptySamples",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotEnoughData(_) => "NotEnoughData",
            Error::DegenerateData => "DegenerateData",
            Error::RankTooHigh { .. } => "RankTooHigh",
            Error::EmptyInput => "EmptyInput",
            Error::EmptyItem(_) => "EmptyItem",
            Error::ConceptOutOfRange { .. } => "ConceptOutOfRange",
            Error::NonFiniteEvaluation(_) => "NonFiniteEvaluation",
            Error::EmptyFlagSet => "EmptyFlagSet",
            Error::FlagNotInUncertainBank(_) => "FlagNotInUncertainBank",
            Error::MissingTruthFlags(_) => "MissingTruthFlags",
            Error::TooFewPairs(_) => "TooFewPairs",
            Error::ConstantInput => "ConstantInput",
            Error::MissingGroupAttr(_) => "MissingGroupAttr",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::MissingRunArtifacts(_) => "MissingRunArtifacts",
            Error::AddrInUse(_) => "AddrInUse",
        }
    }

    /// True when the failure stems from user-supplied input rather than from
    /// a computation on valid input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader(_)
                | Error::UnsupportedDtype(_)
                | Error::FortranOrder
                | Error::TruncatedPayload { .. }
                | Error::TrailingData { .. }
                | Error::MissingFile(_)
                | Error::InvalidManifest(_)
                | Error::InconsistentShapes(_)
                | Error::NegativeActivations { .. }
                | Error::InvalidPredictions(_)
                | Error::InvalidHead(_)
                | Error::Json { .. }
                | Error::EmptyFlagSet
                | Error::FlagNotInUncertainBank(_)
                | Error::MissingTruthFlags(_)
                | Error::MissingGroupAttr(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::InvalidArgument(_)
                | Error::ConceptOutOfRange { .. }
                | Error::MissingRunArtifacts(_)
                | Error::AddrInUse(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
