use std::sync::Arc;

use rand::seq::SliceRandom;

use super::profile::{ModalBasis, ProfileProblem};
use super::smoother::SmootherSpec;
use super::fit_with_weight;
use crate::data::{FitConfig, FunctionalDataset};
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, KernelSpec};
use crate::rng::substream;

/// Subject-level K-fold cross-validation over `config.lambda_grid`.
///
/// Gamma is held at `config.gamma_init` when given, otherwise at the estimate
/// from a full-data fit at `config.lambda`; the coefficient functions are
/// re-solved on each training fold and scored by unpenalized squared
/// prediction error on the held-out subjects.
pub fn select_lambda(dataset: &FunctionalDataset, config: &FitConfig) -> Result<f64> {
    let grid = config
        .lambda_grid
        .as_ref()
        .ok_or_else(|| Error::Config("lambda_grid is required for cross-validation".into()))?;
    if grid.is_empty() {
        return Err(Error::Config("lambda_grid is empty".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let gamma = match &config.gamma_init {
        Some(g) => g.clone(),
        None => {
            let mut cfg = config.clone();
            cfg.lambda_grid = None;
            fit_with_weight(dataset, &cfg, None)?.gamma
        }
    };
    let errors = cv_errors(dataset, config, &gamma)?;
    let (best, _) = grid
        .iter()
        .zip(&errors)
        .fold((grid[0], f64::INFINITY), |acc, (&l, &e)| if e < acc.1 { (l, e) } else { acc });
    Ok(best)
}

/// Cross-validated prediction error for every value in `config.lambda_grid`
/// at a fixed `gamma`.
pub fn cv_errors(dataset: &FunctionalDataset, config: &FitConfig, gamma: &[f64]) -> Result<Vec<f64>> {
    let grid = config
        .lambda_grid
        .as_ref()
        .ok_or_else(|| Error::Config("lambda_grid is required for cross-validation".into()))?;
    if grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Config("lambda_grid values must be positive".into()));
    }
    let k = config.cv_folds;
    if k < 2 {
        return Err(Error::Config(format!("cv_folds must be at least 2, got {k}")));
    }
    let n = dataset.n();
    let min_fold = n / k;
    if min_fold < dataset.p() + dataset.d() {
        return Err(Error::Config(format!(
            "cross-validation folds of {min_fold} subjects are smaller than p + d = {}",
            dataset.p() + dataset.d()
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(config.seed, "cv-folds", 0));
    let folds: Vec<Vec<usize>> = (0..k)
        .map(|f| order.iter().enumerate().filter(|(pos, _)| pos % k == f).map(|(_, &i)| i).collect())
        .collect();

    let kernel = Arc::new(KernelModel::new(dataset.grid(), KernelSpec::gaussian(config.kernel_nu))?);
    let basis = Arc::new(ModalBasis::unweighted(&kernel));
    let h = config.bandwidth_for(n);
    let smoother = SmootherSpec::normal_cdf(h);
    let g_all = dataset.plane_index(gamma).map(|u| smoother.eval(u));
    let p = dataset.p();
    let xt = dataset.xtilde();

    let mut errors = vec![0.0; grid.len()];
    for held in &folds {
        let train: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
        let train_ds = dataset.select_subjects(&train);
        for (li, &lambda) in grid.iter().enumerate() {
            let problem =
                ProfileProblem::with_basis(&train_ds, kernel.clone(), basis.clone(), lambda, h)?;
            let solve = problem.solve(gamma);
            let theta = solve.coefficients(p, dataset.d(), kernel.clone());
            let curves = theta.on_grid();
            for &i in held {
                for j in 0..dataset.m() {
                    let mut pred = 0.0;
                    for c in 0..p {
                        pred += dataset.x()[(i, c)] * curves[(c, j)];
                    }
                    for l in 0..dataset.d() {
                        pred += xt[(i, l)] * g_all[i] * curves[(p + l, j)];
                    }
                    let r = dataset.y()[(i, j)] - pred;
                    errors[li] += r * r;
                }
            }
        }
    }
    let denom = (n * dataset.m()) as f64;
    Ok(errors.into_iter().map(|e| e / denom).collect())
}
