//! GMM estimation and asymptotic theory for parameters that are only
//! second-order locally identified (Jacobian rank deficiency of one).
//!
//! The crate is organised around the estimation pipeline:
//!
//! * [`moments`]: moment models, datasets, sample moments and the
//!   finite-difference derivative bundle;
//! * [`estimator`]: the GMM objective, multistart Nelder–Mead minimisation and
//!   the first-order sandwich variance;
//! * [`asymptotics`]: canonical reparametrisation, regime classification,
//!   projection geometry, the limit variables `V`, `R1`, `R2`, limit-law
//!   simulation and quantile confidence sets;
//! * [`models`]: the panel AR(1) example and synthetic polynomial models;
//! * [`montecarlo`]: the replication harness checking rates and limit laws.
//!
//! Heavy loops (limit draws, Monte Carlo replications, multistarts) run on
//! rayon when the `parallel` feature is enabled and sequentially otherwise.
//! Results are identical either way: every work item draws from its own
//! random stream keyed by the master seed and the item index.

pub mod asymptotics;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod linalg;
pub mod models;
pub mod moments;
pub mod montecarlo;

pub use error::{Error, Result};
