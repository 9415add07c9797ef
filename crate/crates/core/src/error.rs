use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid constraint: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: spec has {spec} axes, grid has {grid}")]
    DimensionMismatch { spec: usize, grid: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("basic region {plan:?} does not fit in grid {grid:?}")]
    PlanLargerThanGrid { plan: Vec<usize>, grid: Vec<usize> },

    #[error("constraints are unsatisfiable: region {region} lost all support")]
    EmptySupport { region: usize },

    #[error("unknown region id {0}")]
    UnknownRegion(usize),

    #[error("belief of region {region} is positive where its factors vanish")]
    BeliefSupport { region: usize },

    #[error("region {region} has {vars} variables, above the limit of {limit}")]
    RegionTooLarge {
        region: usize,
        vars: usize,
        limit: usize,
    },

    #[error("guard-band bounds need k = inf on every axis")]
    FiniteKUnsupported,

    #[error("guard-band bounds need a square or cubic shape, got {0:?}")]
    NonCubicShape(Vec<usize>),

    #[error("{cells} cells exceeds the brute-force limit of {limit}")]
    SizeGuard { cells: usize, limit: usize },

    #[error("transfer matrix needs {states} states, above the budget of {budget}")]
    StateBudget { states: usize, budget: usize },

    #[error("GBP did not converge: residual {residual:e} after {iterations} iterations")]
    NonConverged { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampler gave up after {restarts} restarts (last dead end at basic region {region})")]
    RestartBudgetExceeded { restarts: usize, region: usize },

    #[error("sample {index}: {source}")]
    AtSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Error {
        Error::AtSample {
            index,
            source: Box::new(self),
        }
    }
}
