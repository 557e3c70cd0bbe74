use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model schema: {0}")]
    Schema(String),

    #[error("malformed model JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sensitive spec: {0}")]
    Spec(String),

    #[error("hyperplane has a zero normal vector")]
    ZeroNormal,

    #[error("region is infeasible")]
    Infeasible,

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("traversal exceeded {0} pops without reaching a boundary")]
    TraversalLimit(usize),

    #[error("exhaustive oracle refuses networks with {found} hidden neurons (limit {limit})")]
    TooLarge { found: usize, limit: usize },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
