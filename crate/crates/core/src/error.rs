use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("integer overflow while counting monomials ({nvars} variables, degree {degree})")]
    CountOverflow { nvars: usize, degree: usize },

    #[error("variable count mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("bad polynomial `{text}` at column {column}: {message}")]
    Expression {
        text: String,
        column: usize,
        message: String,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("time variable in infinite-horizon problem")]
    TimeInInfiniteHorizon,

    #[error("time variable not allowed in {0}")]
    TimeNotAllowed(String),

    #[error("problem has no objectives")]
    EmptyObjectives,

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("no bounding box for state {0}: add box inequalities to state_set or set options.box")]
    NoBoundingBox(String),

    #[error("relaxation degree {degree} too small: needs at least {required}")]
    DegreeTooSmall { degree: usize, required: usize },

    #[error("moment of degree {requested} exceeds layout degree {stored}")]
    DegreeExceedsLayout { requested: usize, stored: usize },

    #[error("cannot decode solver status {0}")]
    Undecodable(String),

    #[error("extraction failed, raise degree or loosen tolerance: {0}")]
    ExtractionFailed(String),

    #[error("malformed SDPA input: {0}")]
    Sdpa(String),

    #[error("{0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_syntax() || e.is_eof() {
            Error::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        } else {
            Error::Json(e.to_string())
        }
    }
}
