//! Robust low-rank matrix recovery with the overparameterized
//! preconditioned subgradient method (OPSA).
//!
//! The crate covers the whole synthetic pipeline: planted ground truths
//! ([`model`]), Gaussian sensing with sparse outliers ([`sensing`]), the
//! ℓ1 objective ([`objective`]), OPSA and its baselines ([`solver`]),
//! distance and rate evaluations ([`metrics`]), empirical RIP probes
//! ([`rip`]) and a config-driven experiment runner ([`harness`]).

pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rip;
pub mod rng;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{generate_ground_truth, truncated_svd_factors, FactorPair, GroundTruth};
pub use objective::LossContext;
pub use sensing::{corrupt, make_gaussian_ensemble, GaussianEnsemble, Measurements, StorageMode};
