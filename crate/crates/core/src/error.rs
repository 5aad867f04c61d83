//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ingest
    #[error("feature {feature}: missing or invalid property `{property}`")]
    MissingProperty { feature: String, property: String },
    #[error("feature {feature}: invalid polygon: {reason}")]
    InvalidPolygon { feature: String, reason: String },
    #[error("duplicate cell_id `{0}`")]
    DuplicateCellId(String),
    #[error("cells `{a}` and `{b}` overlap by area {area:.6e}")]
    OverlappingCells { a: String, b: String, area: f64 },
    #[error("geographic coordinates ({0}) are not supported; supply a projected CRS in meters")]
    GeographicCrs(String),
    #[error("line {line}: unknown cell_id `{cell_id}`")]
    UnknownCell { line: u64, cell_id: String },
    #[error("line {line}: unknown group `{group}`")]
    UnknownGroup { line: u64, group: String },
    #[error("line {line}: negative count {count}")]
    NegativeCount { line: u64, count: i64 },
    #[error("line {line}: period_start `{period}` is not aligned to a 4-hour boundary")]
    MisalignedPeriod { line: u64, period: String },
    #[error("line {line}: duplicate record for ({cell_id}, {period}, {group})")]
    DuplicateRecord {
        line: u64,
        cell_id: String,
        period: String,
        group: String,
    },
    #[error("cell `{cell_id}` at {period}: {detail}")]
    SubgroupExceedsTotal {
        cell_id: String,
        period: String,
        detail: String,
    },
    #[error("age cohorts `{a}` and `{b}` overlap")]
    OverlappingCohorts { a: String, b: String },
    #[error("line {line}: unknown POI category `{category}`")]
    UnknownCategory { line: u64, category: String },
    #[error("{context}: malformed input: {message}")]
    Malformed { context: String, message: String },

    // metrics
    #[error("no 4-hour bin falls inside the time window {0}")]
    EmptyWindow(String),
    #[error("degenerate field: {0}")]
    DegenerateField(String),

    // spatial
    #[error("too few cells for analysis: {found} (need at least {needed})")]
    TooFewCells { found: usize, needed: usize },

    // characterize
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("no spots to compare: {0}")]
    NoSpots(String),

    // synth / cli
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Malformed {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Variant name, used by `validate` to report one named error per file.
    pub fn name(&self) -> &'static str {
        match self.root() {
            Error::MissingProperty { .. } => "MissingProperty",
            Error::InvalidPolygon { .. } => "InvalidPolygon",
            Error::DuplicateCellId(_) => "DuplicateCellId",
            Error::OverlappingCells { .. } => "OverlappingCells",
            Error::GeographicCrs(_) => "GeographicCrs",
            Error::UnknownCell { .. } => "UnknownCell",
            Error::UnknownGroup { .. } => "UnknownGroup",
            Error::NegativeCount { .. } => "NegativeCount",
            Error::MisalignedPeriod { .. } => "MisalignedPeriod",
            Error::DuplicateRecord { .. } => "DuplicateRecord",
            Error::SubgroupExceedsTotal { .. } => "SubgroupExceedsTotal",
            Error::OverlappingCohorts { .. } => "OverlappingCohorts",
            Error::UnknownCategory { .. } => "UnknownCategory",
            Error::Malformed { .. } => "Malformed",
            Error::EmptyWindow(_) => "EmptyWindow",
            Error::DegenerateField(_) => "DegenerateField",
            Error::TooFewCells { .. } => "TooFewCells",
            Error::EmptySample(_) => "EmptySample",
            Error::NoSpots(_) => "NoSpots",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "Io",
            Error::Stage { .. } => unreachable!("root() strips stage wrappers"),
        }
    }

    /// Process exit code: 2 validation, 3 statistical degeneracy, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Io { .. } => 4,
            Error::EmptyWindow(_)
            | Error::DegenerateField(_)
            | Error::TooFewCells { .. }
            | Error::EmptySample(_)
            | Error::NoSpots(_) => 3,
            _ => 2,
        }
    }
}
