use thiserror::Error;

/// Service failures. [`ServiceError::class`] is the stable, machine-readable
/// part that goes on the wire and into the CLI's one-line error output.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown task {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    NotReady(String),
    #[error("{0}")]
    Corrupt(String),
    /// A fault injected by a test hook; the in-memory state must be discarded.
    #[error("injected fault at {0}")]
    Crashed(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(otune_core::Error),
    #[error(transparent)]
    Harness(#[from] otune_harness::HarnessError),
}

impl ServiceError {
    pub fn class(&self) -> &'static str {
        match self {
            ServiceError::Invalid(_) => "invalid",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::State(_) => "state",
            ServiceError::NotReady(_) => "not_ready",
            ServiceError::Corrupt(_) => "corrupt_log",
            ServiceError::Crashed(_) => "crashed",
            ServiceError::Io(_) => "io",
            ServiceError::Engine(_) => "engine",
            ServiceError::Harness(_) => "harness",
        }
    }
}

impl From<otune_core::Error> for ServiceError {
    fn from(e: otune_core::Error) -> Self {
        use otune_core::Error as E;
        match e {
            E::Schema(m) | E::Domain(m) | E::Argument(m) => ServiceError::Invalid(m),
            E::State(m) => ServiceError::State(m),
            other => ServiceError::Engine(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
