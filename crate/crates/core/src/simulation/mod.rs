//! Simulation designs, metrics and Monte-Carlo drivers.

mod dgp;
mod metrics;
mod study;

pub use dgp::{beta_true, delta_true, generate, lambda_true, DGPSpec, DgpMode, Simulated, Truth};
pub use metrics::{accuracy_rate, isotonic_deviation, isotonic_fit, ks_uniform, mean, median, rase, sd, sup_error};
pub use study::{
    run_estimation_study, run_power_study, CellSummary, EstimationRecord, EstimationStudy, Method, PowerPoint,
    PowerStudy, ALPHA, COMPONENTS, MAX_FAILURE_RATE,
};
