use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point {x} lies within tolerance of branch endpoint {endpoint}")]
    BranchBoundary { x: f64, endpoint: f64 },
    #[error("excursion exceeded the cap of {0} steps")]
    MaxIterExceeded(u64),
    #[error("accepted mass {accepted} below required {required}")]
    CoverageFailure { accepted: f64, required: f64 },
    #[error("depth {0} is too small to build a scheme")]
    DepthExceeded(usize),
    #[error("only {found} samples exceed the tail threshold (need {needed})")]
    InsufficientTail { found: usize, needed: usize },
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("|1 - lambda(s)| = {0:e} is below the singularity floor")]
    NearSingular(f64),
    #[error("only {found} points above the noise floor (need {needed})")]
    InsufficientSignal { found: usize, needed: usize },
    #[error("no sign change of G(z) - z on cell {0}")]
    RootNotBracketed(usize),
    #[error("degenerate period ratio: p2 == p3")]
    DegenerateRatio,
    #[error("roof is not differentiable")]
    NonDifferentiableRoof,
    #[error("only {found} hits in the recurrence set (need {needed})")]
    InsufficientHits { found: usize, needed: usize },
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}
