//! Change-plane subgroup learning for functional responses.
//!
//! Coefficient functions live in a Gaussian-kernel RKHS. The crate fits the
//! functions and a grouping hyperplane, refits with an estimated error
//! covariance, tests for the existence of a subgroup with a supremum score
//! statistic, and runs simulation studies.

pub mod covariance;
pub mod data;
pub mod error;
pub mod estimator;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod score_test;
pub mod simulation;

pub use covariance::{estimate_covariance, weighted_fit, weighted_fit_with, CovarianceModel};
pub use data::{
    evaluate_theta, membership, ChangePlaneFit, CoefficientFunctions, FitConfig, FunctionalDataset, GridScale,
};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{fit, fit_with_weight, optimize_gamma, pointwise_bands, BandConfig, PointwiseBands};
pub use io::{load_dataset, write_dataset, RunConfig, StudyConfig};
pub use kernel::{gram_matrix, KernelFamily, KernelModel, KernelSpec};
pub use score_test::{run_subgroup_test, GammaFamily, SubgroupTestResult, TestConfig};
pub use simulation::{generate, DGPSpec, DgpMode};
