//! Smoothed profiled estimation of the coefficient functions and the
//! grouping parameter.

mod bands;
mod cv;
mod optimize;
mod profile;
mod smoother;

use std::sync::Arc;

pub use bands::{pointwise_bands, BandConfig, PointwiseBands};
pub use cv::{cv_errors, select_lambda};
pub use optimize::{
    latin_hypercube, nelder_mead, optimize_gamma_on, regular_grid, search_candidates, GammaBox,
    GammaSearch,
};
pub use profile::{
    normal_equations, profile_loss, profiled_coefficients, ModalBasis, ProfileProblem,
    ProfiledSolve, DEGENERATE_WEIGHT_SD,
};
pub use smoother::{smooth_indicator, SmootherFamily, SmootherSpec};

use crate::covariance::CovarianceModel;
use crate::data::{ChangePlaneFit, FitConfig, FunctionalDataset};
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, KernelSpec};

/// Minimizes the profile loss over gamma from `init`, screening the search box first.
pub fn optimize_gamma(
    dataset: &FunctionalDataset,
    config: &FitConfig,
    weight: Option<&CovarianceModel>,
    init: &[f64],
) -> Result<GammaSearch> {
    profile::check_gamma(dataset, init)?;
    let problem = ProfileProblem::from_config(dataset, config, weight)?;
    Ok(optimize_gamma_on(&problem, config, init, true))
}

/// Unweighted change-plane fit. Selects `lambda` by cross-validation first
/// when `config.lambda_grid` is set.
pub fn fit(dataset: &FunctionalDataset, config: &FitConfig) -> Result<ChangePlaneFit> {
    config.validate()?;
    if config.lambda_grid.is_some() {
        let lambda = select_lambda(dataset, config)?;
        let mut cfg = config.clone();
        cfg.lambda = lambda;
        cfg.lambda_grid = None;
        return fit_with_weight(dataset, &cfg, None);
    }
    fit_with_weight(dataset, config, None)
}

/// Alternates the closed-form coefficient solve and the gamma update until
/// the profiled loss stabilizes.
pub fn fit_with_weight(
    dataset: &FunctionalDataset,
    config: &FitConfig,
    weight: Option<Arc<CovarianceModel>>,
) -> Result<ChangePlaneFit> {
    config.validate()?;
    let kernel = Arc::new(KernelModel::new(
        dataset.grid(),
        KernelSpec::gaussian(config.kernel_nu),
    )?);
    let h = config.bandwidth_for(dataset.n());
    let problem = ProfileProblem::new(dataset, kernel.clone(), config.lambda, h, weight.as_deref())?;
    fit_problem(&problem, config, weight)
}

pub(crate) fn fit_problem(
    problem: &ProfileProblem<'_>,
    config: &FitConfig,
    weight: Option<Arc<CovarianceModel>>,
) -> Result<ChangePlaneFit> {
    let dataset = problem.dataset();
    let q = dataset.q();
    let init = match &config.gamma_init {
        Some(g) => {
            profile::check_gamma(dataset, g)?;
            g.clone()
        }
        None => {
            let bx = GammaBox {
                lower: config.gamma_box.0,
                upper: config.gamma_box.1,
            };
            let cands = match config.grid_search.filter(|_| q <= 2) {
                Some(k) => regular_grid(k.max(1), q, bx),
                None => latin_hypercube(config.screen_points.max(1), q, bx, config.seed),
            };
            search_candidates(problem, &cands).gamma
        }
    };

    // A user-supplied start is refined locally; otherwise the box is screened first.
    let screen_first = config.gamma_init.is_none();
    let mut gamma = init;
    let mut loss_prev = problem.profile_loss(&gamma);
    let mut trace = vec![loss_prev];
    let mut converged = false;
    let mut flat = false;
    let mut n_iter = 0;
    for it in 0..config.max_iter {
        n_iter = it + 1;
        let search = optimize_gamma_on(problem, config, &gamma, it == 0 && screen_first);
        if search.flat {
            flat = true;
            converged = true;
            break;
        }
        gamma = search.gamma;
        let loss = search.loss;
        trace.push(loss);
        if (loss - loss_prev).abs() <= config.tol * (1.0 + loss_prev.abs()) {
            converged = true;
            break;
        }
        loss_prev = loss;
    }

    let solve = problem.solve(&gamma);
    if solve.d_vec.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            min_eigenvalue: f64::NAN,
        });
    }
    let theta = solve.coefficients(dataset.p(), dataset.d(), problem.kernel().clone());
    Ok(ChangePlaneFit {
        theta,
        gamma,
        loss_trace: trace,
        converged,
        n_iter,
        weighted: weight.is_some(),
        lambda: problem.lambda(),
        h: problem.h(),
        covariance: weight,
        flat_objective: flat,
    })
}
