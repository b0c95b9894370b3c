use thiserror::Error;

/// Errors produced anywhere in the retrieval stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate vector: zero norm or non-finite entry")]
    DegenerateVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid term weight {weight} for term {term}")]
    InvalidWeight { term: u32, weight: f64 },
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),
    #[error("unknown document id `{0}`")]
    UnknownDoc(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid temperature {0}; must be > 0")]
    InvalidTemperature(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("document `{doc_id}` has length {length}, outside every length group")]
    LengthOutOfRange { doc_id: String, length: usize },
    #[error("invalid batch plan: {0}")]
    InvalidPlan(String),
    #[error("query is missing the {0} representation")]
    MissingRepresentation(&'static str),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable variant name, used by the CLI when reporting data errors.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DegenerateVector => "DegenerateVector",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidWeight { .. } => "InvalidWeight",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::DuplicateDoc(_) => "DuplicateDoc",
            Error::UnknownDoc(_) => "UnknownDoc",
            Error::EmptyInput => "EmptyInput",
            Error::InvalidTemperature(_) => "InvalidTemperature",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::LengthOutOfRange { .. } => "LengthOutOfRange",
            Error::InvalidPlan(_) => "InvalidPlan",
            Error::MissingRepresentation(_) => "MissingRepresentation",
            Error::Parse { .. } => "ParseError",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Io(_) => "IoError",
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
