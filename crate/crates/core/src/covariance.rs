//! Across-grid covariance estimation and the covariance-weighted refit.
//!
//! Residual curves from an unweighted fit are smoothed in the RKHS to get
//! subject-level processes, whose empirical covariance estimates `Λ`. The
//! leftover roughness estimates the white measurement-error variance on the
//! diagonal. Their sum `Φ̂` is inverted (with a relative ridge when
//! ill-conditioned) and used as the quadratic form of a weighted refit.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::data::{ChangePlaneFit, FitConfig, FunctionalDataset};
use crate::error::{Error, Result};
use crate::estimator::{fit_with_weight, SmootherSpec};
use crate::kernel::{ridge_solve, KernelModel, KernelSpec};

/// Condition number above which `Φ̂` receives a stabilizing ridge.
pub const PHI_CONDITION_LIMIT: f64 = 1e10;
/// Default relative ridge for `Φ̂`.
pub const PHI_STABILIZATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub lambda_hat: DMatrix<f64>,
    pub e_hat_diag: DVector<f64>,
    /// `Λ̂ + diag(Ê)`, before any stabilizing ridge.
    pub phi_hat: DMatrix<f64>,
    phi_inv: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    pub ridge_added: f64,
}

impl CovarianceModel {
    /// Identity weight; a weighted fit with it reproduces the unweighted fit.
    pub fn identity(m: usize) -> Self {
        Self {
            lambda_hat: DMatrix::zeros(m, m),
            e_hat_diag: DVector::from_element(m, 1.0),
            phi_hat: DMatrix::identity(m, m),
            phi_inv: DMatrix::identity(m, m),
            cholesky: DMatrix::identity(m, m),
            ridge_added: 0.0,
        }
    }

    /// True when the stabilized weight is exactly the identity.
    pub fn is_identity(&self) -> bool {
        self.ridge_added == 0.0 && self.phi_hat == DMatrix::identity(self.dim(), self.dim())
    }

    pub fn dim(&self) -> usize {
        self.phi_hat.nrows()
    }

    /// Inverse of the (stabilized) `Φ̂`.
    pub fn phi_inv(&self) -> &DMatrix<f64> {
        &self.phi_inv
    }

    /// Lower Cholesky factor of the (stabilized) `Φ̂`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `Φ̂ + ridge_added I`.
    pub fn phi_stabilized(&self) -> DMatrix<f64> {
        let mut phi = self.phi_hat.clone();
        for i in 0..phi.nrows() {
            phi[(i, i)] += self.ridge_added;
        }
        phi
    }
}

/// `y_i*(s_m) = Y_i(s_m) - X_iᵀ β̂(s_m) - X̃_iᵀ δ̂(s_m) G_h(Z_1i + Z_2iᵀ γ̂)`.
pub fn residual_processes(dataset: &FunctionalDataset, fit: &ChangePlaneFit) -> DMatrix<f64> {
    let smoother = SmootherSpec::normal_cdf(fit.h);
    let g = dataset.plane_index(&fit.gamma).map(|u| smoother.eval(u));
    let values = fit.theta.on_grid();
    let p = dataset.p();
    let d = dataset.d();
    let beta = values.rows(0, p);
    let delta = values.rows(p, d);
    let mut xg = dataset.xtilde();
    for mut col in xg.column_iter_mut() {
        col.component_mul_assign(&g);
    }
    dataset.y() - dataset.x() * beta - xg * delta
}

/// Smooths every residual curve: `f̂_i = (K + λ M I)⁻¹ y_i*`, `ν̂_i = K f̂_i`.
/// Returns `(f̂, ν̂)` with one subject per row.
pub fn smooth_nu(
    residuals: &DMatrix<f64>,
    kernel: &KernelModel,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let m = kernel.len();
    if residuals.ncols() != m {
        return Err(Error::Validation("residual width does not match grid".into()));
    }
    let f_t = ridge_solve(kernel.gram(), lambda * m as f64, &residuals.transpose())?;
    let f = f_t.transpose();
    let nu = &f * kernel.gram();
    Ok((f, nu))
}

/// `Λ̂ = n⁻¹ Σ_i ν̂_i ν̂_iᵀ`.
pub fn estimate_lambda(nu_hat_grid: &DMatrix<f64>) -> DMatrix<f64> {
    let n = nu_hat_grid.nrows().max(1) as f64;
    let mut lam = nu_hat_grid.tr_mul(nu_hat_grid) / n;
    // exact symmetry
    let m = lam.nrows();
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (lam[(i, j)] + lam[(j, i)]);
            lam[(i, j)] = v;
            lam[(j, i)] = v;
        }
    }
    lam
}

/// Measurement-error variance on the grid: `Ê = K (K + λ M I)⁻¹ mean_i(e_i*²)`
/// with `e* = y* - ν̂`, floored at `1e-8 (mean diag Λ̂ + 1)`.
pub fn estimate_e(
    residuals: &DMatrix<f64>,
    nu_hat_grid: &DMatrix<f64>,
    kernel: &KernelModel,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = residuals.nrows().max(1) as f64;
    let m = kernel.len();
    let e_star = residuals - nu_hat_grid;
    let target = DMatrix::from_iterator(
        m,
        1,
        e_star.column_iter().map(|c| c.norm_squared() / n),
    );
    let g = ridge_solve(kernel.gram(), lambda * m as f64, &target)?;
    let e = kernel.gram() * g;
    let diag_lambda_mean = nu_hat_grid
        .column_iter()
        .map(|c| c.norm_squared() / n)
        .sum::<f64>()
        / m as f64;
    let floor = 1e-8 * (diag_lambda_mean + 1.0);
    Ok(DVector::from_iterator(m, e.iter().map(|&v| v.max(floor))))
}

/// `Φ̂ = Λ̂ + diag(Ê)`, with its stabilized inverse.
pub fn assemble_phi(
    lambda_hat: &DMatrix<f64>,
    e_hat_diag: &DVector<f64>,
    stabilization_eps: f64,
) -> Result<CovarianceModel> {
    let m = lambda_hat.nrows();
    if lambda_hat.ncols() != m || e_hat_diag.len() != m {
        return Err(Error::CovarianceAssembly(format!(
            "shape mismatch: Λ̂ {}x{}, Ê {}",
            lambda_hat.nrows(),
            lambda_hat.ncols(),
            e_hat_diag.len()
        )));
    }
    let mut phi = lambda_hat.clone();
    for i in 0..m {
        phi[(i, i)] += e_hat_diag[i].max(0.0);
    }
    phi = (&phi + phi.transpose()) * 0.5;
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::CovarianceAssembly("non-finite entries in Φ̂".into()));
    }
    let eig = SymmetricEigen::new(phi.clone());
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if !(max_ev > 0.0) {
        return Err(Error::CovarianceAssembly("Φ̂ has no positive eigenvalue".into()));
    }
    if min_ev < -1e-8 * max_ev {
        return Err(Error::CovarianceAssembly(format!(
            "Φ̂ is not positive semidefinite (smallest eigenvalue {min_ev:e})"
        )));
    }
    let ridge_added = if min_ev <= 0.0 || max_ev / min_ev > PHI_CONDITION_LIMIT {
        stabilization_eps * phi.trace() / m as f64
    } else {
        0.0
    };
    let mut stabilized = phi.clone();
    for i in 0..m {
        stabilized[(i, i)] += ridge_added;
    }
    let chol = Cholesky::new(stabilized).ok_or_else(|| {
        Error::CovarianceAssembly("Cholesky factorization of Φ̂ failed".into())
    })?;
    let mut phi_inv = chol.inverse();
    phi_inv = (&phi_inv + phi_inv.transpose()) * 0.5;
    Ok(CovarianceModel {
        lambda_hat: lambda_hat.clone(),
        e_hat_diag: e_hat_diag.clone(),
        phi_hat: phi,
        phi_inv,
        cholesky: chol.l(),
        ridge_added,
    })
}

/// Full covariance pipeline from an unweighted fit.
pub fn estimate_covariance(
    dataset: &FunctionalDataset,
    config: &FitConfig,
    fit: &ChangePlaneFit,
) -> Result<CovarianceModel> {
    let kernel = KernelModel::new(dataset.grid(), KernelSpec::gaussian(config.kernel_nu))?;
    let lam = config.covariance_lambda();
    let resid = residual_processes(dataset, fit);
    let (_, nu) = smooth_nu(&resid, &kernel, lam)?;
    let lambda_hat = estimate_lambda(&nu);
    let e_hat = estimate_e(&resid, &nu, &kernel, lam)?;
    assemble_phi(&lambda_hat, &e_hat, PHI_STABILIZATION_EPS)
}

/// Covariance-weighted refit started from an unweighted fit.
pub fn weighted_fit(
    dataset: &FunctionalDataset,
    config: &FitConfig,
    init_fit: &ChangePlaneFit,
) -> Result<ChangePlaneFit> {
    let cov = estimate_covariance(dataset, config, init_fit)?;
    weighted_fit_with(dataset, config, init_fit, cov)
}

/// Weighted refit with a caller-supplied weight.
pub fn weighted_fit_with(
    dataset: &FunctionalDataset,
    config: &FitConfig,
    init_fit: &ChangePlaneFit,
    covariance: CovarianceModel,
) -> Result<ChangePlaneFit> {
    let mut cfg = config.clone();
    cfg.gamma_init = Some(init_fit.gamma.clone());
    cfg.lambda = init_fit.lambda;
    cfg.h = Some(init_fit.h);
    cfg.lambda_grid = None;
    fit_with_weight(dataset, &cfg, Some(Arc::new(covariance)))
}
