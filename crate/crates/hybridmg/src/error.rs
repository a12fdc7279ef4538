use std::fmt;

/// Crate-wide error type. Variants map onto the CLI exit codes: `Config`
/// means a usage/configuration problem (exit 1), everything else is treated
/// as a numerical or data failure (exit 2).
#[derive(Debug)]
pub enum Error {
    /// Invalid mesh or a refinement that produced a degenerate cell.
    Mesh(String),
    /// Dimension or level mismatch between operands.
    Shape(String),
    /// Nonlinear or linear solver failure (divergence, non-finite values).
    Solver(String),
    /// Malformed or incompatible file contents.
    Format(String),
    /// Invalid configuration or command usage.
    Config(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Mesh(m) => write!(f, "mesh error: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::Solver(m) => write!(f, "solver error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
