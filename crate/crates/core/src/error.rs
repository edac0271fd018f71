use thiserror::Error;

/// Errors raised by the estimation pipeline and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("non-monotonic timestamps: {prev} followed by {next}")]
    NonMonotonicTime { prev: f64, next: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bias delta {delta:.4} exceeds re-linearization threshold {threshold} and no samples are buffered")]
    BiasRelinearization { delta: f64, threshold: f64 },

    #[error("TDCP measurement for {0} was not accepted by the cycle-slip check")]
    UnacceptedTdcp(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite residual in factor {0}")]
    NonFiniteResidual(String),

    #[error("problem is not initialized")]
    NotInitialized,

    #[error("initialization deferred: {0}")]
    InitializationDeferred(String),

    #[error("insufficient time overlap: {0:.1}% of estimates matched")]
    InsufficientOverlap(f64),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
