use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data error: {0}")]
    Data(String),

    #[error("moment evaluation produced a non-finite value at observation {index}")]
    NonFiniteMoment { index: usize },

    #[error("point {point:?} (with stencil radius) leaves the parameter space")]
    Domain { point: Vec<f64> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("Jacobian is rank deficient ({rank} < {p}); use the second-order limit theory")]
    RankDeficient { rank: usize, p: usize },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("identification geometry: {0}")]
    Geometry(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("model construction: {0}")]
    Model(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("{failed} of {total} replications failed (limit 5%); first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
