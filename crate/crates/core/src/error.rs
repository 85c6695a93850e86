use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("matrix not symmetric: asymmetry {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },
    #[error("singular weight: eigenvalue {eigenvalue:e} at cell {cell}")]
    SingularWeight { cell: usize, eigenvalue: f64 },
    #[error("non-positive weight value {value:e} at cell {cell}")]
    NonPositiveWeight { cell: usize, value: f64 },
    #[error("region contains no cell centers of the grid")]
    EmptyRegion,
    #[error("invalid exponent: {0}")]
    Exponent(String),
    #[error("invalid constant: {0}")]
    InvalidConstant(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unknown family '{0}'")]
    UnknownFamily(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("cubes overlap: {0} and {1}")]
    Overlap(usize, usize),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
