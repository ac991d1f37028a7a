use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid circle map: {0}")]
    InvalidMap(String),

    #[error("inverse branch solve did not converge for target {target} after {iterations} iterations (residual {residual:e})")]
    BranchNotConverged {
        target: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("branch enumeration would produce {count} branches (limit {limit})")]
    BranchOverflow { count: u128, limit: u128 },

    #[error("invalid base system: {0}")]
    InvalidBase(String),

    #[error("representation mismatch: {0}")]
    Representation(String),

    #[error("cylinder observable has depth 0; the shift transfer operator needs at least one symbol")]
    DepthExhausted,

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("density became negative ({min:e}) at representation point {index}")]
    NegativeDensity { index: usize, min: f64 },

    #[error("epsilon {epsilon} is not below the admissible bound {epsilon_max}")]
    EpsilonTooLarge { epsilon: f64, epsilon_max: f64 },

    #[error("observable is not in K_P: fiber-integral defect {defect:e} exceeds {limit:e}")]
    NotInKp { defect: f64, limit: f64 },

    #[error("matrix dimension {dim} exceeds the dense eigensolver limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("at epsilon = {epsilon}: {source}")]
    AtEpsilon {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the failure came from a numerical routine rather than from
    /// invalid input.
    pub fn is_numerical(&self) -> bool {
        if let Error::AtEpsilon { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::BranchNotConverged { .. }
                | Error::NotConverged { .. }
                | Error::NegativeDensity { .. }
                | Error::NotInKp { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
