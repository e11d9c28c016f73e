use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("qubit count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    IndexOutOfRange { index: usize, n_qubits: usize },
    #[error("invalid Pauli literal {0:?}")]
    ParsePauli(String),
    #[error("non-Clifford gate {0}")]
    NonClifford(String),
    #[error("near-Clifford expansion needs {requested} free rotations, budget is {budget}")]
    BranchBudget { requested: usize, budget: usize },
    #[error("gate {0} is not a rotation")]
    NotARotation(usize),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("postselection kept no shots")]
    PostselectionAnnihilated,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
