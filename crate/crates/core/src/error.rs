pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or state violates a documented precondition.
    #[error("{0}")]
    Domain(String),
    /// A problem size exceeds a hard limit.
    #[error("{0}")]
    Capacity(String),
    /// A solver could not produce a usable answer.
    #[error("{0}")]
    Solver(String),
    /// Remote solver transport or protocol failure.
    #[error("{0}")]
    Remote(String),
    /// Invalid run configuration.
    #[error("{0}")]
    Config(String),
    /// Malformed text in a dump or config file.
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
