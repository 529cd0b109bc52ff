//! Supremum score test for the existence of a subgroup.

mod bootstrap;
mod family;
mod score;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bootstrap::{
    bootstrap_pvalue, evaluate_family, multipliers, test_statistic, FamilyEvaluation, MIN_BOOTSTRAP,
};
pub use family::{build_gamma_family, induced_index, FamilyMode, FamilySpec, GammaFamily, DEFAULT_FRAC_MIN};
pub use score::{
    corrected_influence, null_beta, null_residuals, score_psi1, score_psi2, statistic_from_whitened,
    vs_whitener, whitened_influence, InfluenceBasis, Tensor3, J_CONDITION_LIMIT, VS_CONDITION_LIMIT,
    VS_RIDGE,
};

use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, KernelSpec};
use crate::rng::child_seed;

/// Settings of the score test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Bootstrap draws.
    pub b: usize,
    /// Candidate grouping parameters.
    pub q: usize,
    pub family: FamilyMode,
    pub frac_min: f64,
    /// Fixed slope coordinates for the percentile-line family.
    pub slopes: Option<Vec<f64>>,
    /// Null-fit penalty; falls back to the fit-stage value.
    pub lambda: Option<f64>,
    pub kernel_nu: f64,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            q: 1000,
            family: FamilyMode::PercentileLine,
            frac_min: DEFAULT_FRAC_MIN,
            slopes: None,
            lambda: None,
            kernel_nu: 0.2,
            seed: 0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < MIN_BOOTSTRAP {
            return Err(Error::Config(format!(
                "bootstrap draws must be at least {MIN_BOOTSTRAP}, got {}",
                self.b
            )));
        }
        if self.q == 0 {
            return Err(Error::Config("family size q must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.frac_min) {
            return Err(Error::Config(format!("frac_min must lie in [0, 0.5), got {}", self.frac_min)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("test lambda must be positive, got {l}")));
            }
        }
        if !(self.kernel_nu > 0.0 && self.kernel_nu.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {}", self.kernel_nu)));
        }
        Ok(())
    }
}

/// Outcome of the score test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTestResult {
    pub t_obs: f64,
    pub p_value: f64,
    pub per_gamma: Vec<f64>,
    pub boot_draws: Vec<f64>,
    pub b: usize,
    pub seed: u64,
    pub ill_conditioned: bool,
    pub warnings: Vec<String>,
}

/// Null fit, candidate family and bootstrap, in that order. `fit_lambda` is
/// used when the test config leaves the penalty unset.
pub fn run_subgroup_test(
    dataset: &FunctionalDataset,
    config: &TestConfig,
    fit_lambda: f64,
) -> Result<(SubgroupTestResult, GammaFamily)> {
    config.validate()?;
    let kernel = Arc::new(KernelModel::new(dataset.grid(), KernelSpec::gaussian(config.kernel_nu))?);
    let lambda = config.lambda.unwrap_or(fit_lambda);
    let beta = null_beta(dataset, &kernel, lambda)?;
    let family = build_gamma_family(
        dataset,
        &FamilySpec {
            count: config.q,
            mode: config.family,
            slopes: config.slopes.as_deref(),
            frac_min: config.frac_min,
            seed: child_seed(config.seed, "family", 0),
        },
    )?;
    let result = bootstrap_pvalue(
        dataset,
        &beta,
        &family,
        &kernel,
        config.b,
        child_seed(config.seed, "bootstrap", 0),
    )?;
    Ok((result, family))
}
