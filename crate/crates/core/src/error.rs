use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("directed edges form a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("duplicate edge {0}")]
    DuplicateEdge(String),

    #[error("self-loop on node {0}")]
    SelfLoop(String),

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("invalid edge id {0}")]
    InvalidEdge(usize),

    #[error("edge {0} is not in the graph")]
    MissingEdge(String),

    #[error("auxiliary variable for {0} defined twice")]
    DuplicateAuxBase(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("conditioning block is singular")]
    SingularConditioning,

    #[error("degenerate evaluation: {0}")]
    Degenerate(String),

    #[error("no value bound for known coefficient {0}")]
    Unbound(String),

    #[error("edge set of size {k} exceeds the configured bound {max}")]
    KBound { k: usize, max: usize },

    #[error("path enumeration exceeded the cap of {0} paths")]
    PathCap(usize),

    #[error("covariance input: {0}")]
    Covariance(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            message: message.into(),
        }
    }

    /// True for the errors that mean a search was cut short rather than failed.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::KBound { .. } | Error::PathCap(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
