use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("packing bound violated: measured ratio {ratio} exceeds {bound}")]
    Packing { ratio: f64, bound: f64 },

    #[error("collection is not {eta}-sparse: worst interval {interval} keeps only {fraction} of its length")]
    NotSparse {
        eta: f64,
        interval: String,
        fraction: f64,
    },

    #[error("quantity undefined: {0}")]
    Undefined(String),

    #[error("infeasible construction: {0}")]
    Infeasible(String),

    #[error("domination falsified: {0}")]
    Falsified(String),

    #[error("instance too large for exact mode: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
