//! Closed-form RKHS coefficient solve at a fixed grouping parameter.
//!
//! The penalized normal equations
//!
//! ```text
//! [ G ⊗ (K W K) + λ n M (I ⊗ K) ] d = Σ_i w_i ⊗ K W Y_i,     G = Σ_i w_i w_iᵀ
//! ```
//!
//! (`W = I` unweighted, `W = Φ⁻¹` weighted) are solved in the basis of the
//! generalized eigenproblem `K v = μ Φ v`. With `Φ = L Lᵀ` and
//! `L⁻¹ K L⁻ᵀ = V diag(μ) Vᵀ`, the change of variables `b = L⁻ᵀ V b̃` turns
//! the system into `M` independent `(p+d)`-dimensional systems
//! `(μ_j G + λ n M I) b̃_j = Σ_i w_i ŷ_ij` with `ŷ_i = Vᵀ L⁻¹ Y_i`. The loss
//! separates the same way, so a profile-loss evaluation costs `O(n d M)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::smoother::SmootherSpec;
use crate::covariance::CovarianceModel;
use crate::data::{CoefficientFunctions, FitConfig, FunctionalDataset};
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, KernelSpec};

/// Smoothed weights with a sample standard deviation below this are treated
/// as constant, leaving `delta` unidentified.
pub const DEGENERATE_WEIGHT_SD: f64 = 1e-12;

/// Coordinates in which the normal equations decouple across grid modes.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// Maps modal coefficients to representer coefficients: `b = transform b̃`.
    transform: DMatrix<f64>,
    modes: DVector<f64>,
}

impl ModalBasis {
    pub fn unweighted(kernel: &KernelModel) -> Self {
        Self {
            transform: kernel.eigenvectors().clone(),
            modes: kernel.eigenvalues().clone(),
        }
    }

    pub fn weighted(kernel: &KernelModel, covariance: &CovarianceModel) -> Result<Self> {
        let m = kernel.len();
        if covariance.dim() != m {
            return Err(Error::Validation(format!(
                "covariance dimension {} does not match grid size {m}",
                covariance.dim()
            )));
        }
        if covariance.is_identity() {
            return Ok(Self::unweighted(kernel));
        }
        let l = covariance.cholesky_factor();
        let k = kernel.effective_gram();
        let linv_k = l
            .solve_lower_triangular(&k)
            .ok_or(Error::SingularSystem { min_eigenvalue: 0.0 })?;
        let c = l
            .solve_lower_triangular(&linv_k.transpose())
            .ok_or(Error::SingularSystem { min_eigenvalue: 0.0 })?;
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let transform = l
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or(Error::SingularSystem { min_eigenvalue: 0.0 })?;
        Ok(Self {
            transform,
            modes: eig.eigenvalues.map(|v| v.max(0.0)),
        })
    }

    pub fn modes(&self) -> &DVector<f64> {
        &self.modes
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }
}

/// Solution of the penalized problem at one `gamma`.
#[derive(Debug, Clone)]
pub struct ProfiledSolve {
    /// `(b_1, ..., b_p, c_1, ..., c_d)`, each block of length `M`.
    pub d_vec: DVector<f64>,
    /// Penalized smoothed objective at the solution.
    pub loss: f64,
    /// Smoothed objective without the penalty.
    pub unpenalized_loss: f64,
    pub gamma: Vec<f64>,
    /// `delta` was dropped because the smoothed weights were constant.
    pub degenerate: bool,
}

impl ProfiledSolve {
    pub fn coefficients(&self, p: usize, d: usize, kernel: Arc<KernelModel>) -> CoefficientFunctions {
        let m = kernel.len();
        let b = DMatrix::from_fn(p, m, |k, j| self.d_vec[k * m + j]);
        let c = DMatrix::from_fn(d, m, |l, j| self.d_vec[(p + l) * m + j]);
        CoefficientFunctions { b, c, kernel }
    }
}

/// Precomputed state for repeated profiled solves on one dataset.
#[derive(Debug, Clone)]
pub struct ProfileProblem<'a> {
    dataset: &'a FunctionalDataset,
    kernel: Arc<KernelModel>,
    basis: Arc<ModalBasis>,
    lambda: f64,
    smoother: SmootherSpec,
    xtilde: DMatrix<f64>,
    y_modal: DMatrix<f64>,
    y_modal_sq: DVector<f64>,
    xtx: DMatrix<f64>,
    xty_modal: DMatrix<f64>,
}

impl<'a> ProfileProblem<'a> {
    pub fn new(
        dataset: &'a FunctionalDataset,
        kernel: Arc<KernelModel>,
        lambda: f64,
        h: f64,
        weight: Option<&CovarianceModel>,
    ) -> Result<Self> {
        let basis = match weight {
            Some(cov) => ModalBasis::weighted(&kernel, cov)?,
            None => ModalBasis::unweighted(&kernel),
        };
        Self::with_basis(dataset, kernel, Arc::new(basis), lambda, h)
    }

    pub fn from_config(
        dataset: &'a FunctionalDataset,
        config: &FitConfig,
        weight: Option<&CovarianceModel>,
    ) -> Result<Self> {
        config.validate()?;
        let kernel = Arc::new(KernelModel::new(
            dataset.grid(),
            KernelSpec::gaussian(config.kernel_nu),
        )?);
        Self::new(dataset, kernel, config.lambda, config.bandwidth_for(dataset.n()), weight)
    }

    pub fn with_basis(
        dataset: &'a FunctionalDataset,
        kernel: Arc<KernelModel>,
        basis: Arc<ModalBasis>,
        lambda: f64,
        h: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("bandwidth h must be positive, got {h}")));
        }
        if kernel.len() != dataset.m() || basis.modes.len() != dataset.m() {
            return Err(Error::Validation(format!(
                "kernel grid size {} does not match dataset grid size {}",
                kernel.len(),
                dataset.m()
            )));
        }
        let y_modal = dataset.y() * &basis.transform;
        let y_modal_sq = DVector::from_iterator(
            y_modal.ncols(),
            y_modal.column_iter().map(|c| c.norm_squared()),
        );
        let x = dataset.x();
        let xtx = x.tr_mul(x);
        let xty_modal = x.tr_mul(&y_modal);
        Ok(Self {
            dataset,
            kernel,
            basis,
            lambda,
            smoother: SmootherSpec::normal_cdf(h),
            xtilde: dataset.xtilde(),
            y_modal,
            y_modal_sq,
            xtx,
            xty_modal,
        })
    }

    pub fn dataset(&self) -> &FunctionalDataset {
        self.dataset
    }

    pub fn kernel(&self) -> &Arc<KernelModel> {
        &self.kernel
    }

    pub fn basis(&self) -> &Arc<ModalBasis> {
        &self.basis
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn h(&self) -> f64 {
        self.smoother.h
    }

    /// Smoothed membership weights `G_h(Z1 + Z2 gamma)`.
    pub fn smoothed_weights(&self, gamma: &[f64]) -> DVector<f64> {
        self.dataset.plane_index(gamma).map(|u| self.smoother.eval(u))
    }

    /// True when the smoothed weights are numerically constant at `gamma`.
    pub fn is_degenerate(&self, gamma: &[f64]) -> bool {
        weights_degenerate(&self.smoothed_weights(gamma))
    }

    /// Unpenalized smoothed loss at the profiled coefficients.
    pub fn profile_loss(&self, gamma: &[f64]) -> f64 {
        self.solve_modal(gamma, false).unpenalized
    }

    pub fn solve(&self, gamma: &[f64]) -> ProfiledSolve {
        let modal = self.solve_modal(gamma, true);
        let p = self.dataset.p();
        let d = self.dataset.d();
        let m = self.dataset.m();
        let coef = modal.coef.expect("coefficients requested");
        // b_k = transform * b̃_k
        let rep = &coef * self.basis.transform.transpose();
        let mut d_vec = DVector::zeros((p + d) * m);
        for k in 0..rep.nrows() {
            for j in 0..m {
                d_vec[k * m + j] = rep[(k, j)];
            }
        }
        ProfiledSolve {
            d_vec,
            loss: modal.unpenalized + modal.penalty,
            unpenalized_loss: modal.unpenalized,
            gamma: gamma.to_vec(),
            degenerate: modal.degenerate,
        }
    }

    fn solve_modal(&self, gamma: &[f64], keep_coef: bool) -> ModalSolve {
        let n = self.dataset.n();
        let m = self.dataset.m();
        let p = self.dataset.p();
        let d = self.dataset.d();
        let g = self.smoothed_weights(gamma);
        let degenerate = weights_degenerate(&g);
        let k = if degenerate { p } else { p + d };

        // cross products of w_i = (x_i, xtilde_i * g_i)
        let mut gram = DMatrix::zeros(k, k);
        gram.view_mut((0, 0), (p, p)).copy_from(&self.xtx);
        let mut rhs = DMatrix::zeros(k, m);
        rhs.rows_mut(0, p).copy_from(&self.xty_modal);
        if !degenerate {
            let mut xg = self.xtilde.clone();
            for mut col in xg.column_iter_mut() {
                col.component_mul_assign(&g);
            }
            let cross = self.dataset.x().tr_mul(&xg);
            gram.view_mut((0, p), (p, d)).copy_from(&cross);
            gram.view_mut((p, 0), (d, p)).copy_from(&cross.transpose());
            gram.view_mut((p, p), (d, d)).copy_from(&xg.tr_mul(&xg));
            rhs.rows_mut(p, d).copy_from(&xg.tr_mul(&self.y_modal));
        }

        let ridge = self.lambda * (n * m) as f64;
        let mut coef = if keep_coef {
            Some(DMatrix::zeros(p + d, m))
        } else {
            None
        };
        let mut unpen = 0.0;
        let mut pen = 0.0;
        let mut a = vec![0.0; k * k];
        let mut x = vec![0.0; k];
        for j in 0..m {
            let mu = self.basis.modes[j];
            for r in 0..k {
                for c in 0..k {
                    a[r * k + c] = mu * gram[(r, c)];
                }
                a[r * k + r] += ridge;
                x[r] = rhs[(r, j)];
            }
            cholesky_solve_in_place(&mut a, k, &mut x);
            let mut bt_r = 0.0;
            let mut bt_g_b = 0.0;
            let mut bt_b = 0.0;
            for r in 0..k {
                bt_r += x[r] * rhs[(r, j)];
                bt_b += x[r] * x[r];
                let mut gb = 0.0;
                for c in 0..k {
                    gb += gram[(r, c)] * x[c];
                }
                bt_g_b += x[r] * gb;
            }
            unpen += self.y_modal_sq[j] - 2.0 * mu * bt_r + mu * mu * bt_g_b;
            pen += mu * bt_b;
            if let Some(coef) = coef.as_mut() {
                for r in 0..k {
                    coef[(r, j)] = x[r];
                }
            }
        }
        ModalSolve {
            unpenalized: (unpen / (2.0 * (n * m) as f64)).max(0.0),
            penalty: 0.5 * self.lambda * pen,
            coef,
            degenerate,
        }
    }
}

struct ModalSolve {
    unpenalized: f64,
    penalty: f64,
    coef: Option<DMatrix<f64>>,
    degenerate: bool,
}

pub(crate) fn weights_degenerate(g: &DVector<f64>) -> bool {
    let n = g.len() as f64;
    if n < 2.0 {
        return true;
    }
    let mean = g.mean();
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.sqrt() < DEGENERATE_WEIGHT_SD
}

/// In-place Cholesky solve of a small SPD system stored row-major.
fn cholesky_solve_in_place(a: &mut [f64], k: usize, b: &mut [f64]) {
    for j in 0..k {
        let mut diag = a[j * k + j];
        for t in 0..j {
            diag -= a[j * k + t] * a[j * k + t];
        }
        let ljj = diag.max(f64::MIN_POSITIVE).sqrt();
        a[j * k + j] = ljj;
        for i in (j + 1)..k {
            let mut v = a[i * k + j];
            for t in 0..j {
                v -= a[i * k + t] * a[j * k + t];
            }
            a[i * k + j] = v / ljj;
        }
    }
    for i in 0..k {
        let mut v = b[i];
        for t in 0..i {
            v -= a[i * k + t] * b[t];
        }
        b[i] = v / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for t in (i + 1)..k {
            v -= a[t * k + i] * b[t];
        }
        b[i] = v / a[i * k + i];
    }
}

/// Closed-form penalized solve at `gamma`.
pub fn profiled_coefficients(
    dataset: &FunctionalDataset,
    gamma: &[f64],
    config: &FitConfig,
    weight: Option<&CovarianceModel>,
) -> Result<ProfiledSolve> {
    check_gamma(dataset, gamma)?;
    let problem = ProfileProblem::from_config(dataset, config, weight)?;
    Ok(problem.solve(gamma))
}

/// Unpenalized smoothed loss at the profiled coefficients for `gamma`.
pub fn profile_loss(
    dataset: &FunctionalDataset,
    gamma: &[f64],
    config: &FitConfig,
    weight: Option<&CovarianceModel>,
) -> Result<f64> {
    check_gamma(dataset, gamma)?;
    let problem = ProfileProblem::from_config(dataset, config, weight)?;
    Ok(problem.profile_loss(gamma))
}

pub(crate) fn check_gamma(dataset: &FunctionalDataset, gamma: &[f64]) -> Result<()> {
    if gamma.len() != dataset.q() {
        return Err(Error::Validation(format!(
            "gamma has length {}, expected q = {}",
            gamma.len(),
            dataset.q()
        )));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("gamma has non-finite entries".into()));
    }
    Ok(())
}

/// Normal equations assembled with Kronecker products:
/// `A = G ⊗ (K W K) + λ n M (I ⊗ K)`, `r = Σ_i w_i ⊗ K W Y_i`,
/// using the stabilized Gram matrix and `W = Φ⁻¹` when weighted.
pub fn normal_equations(
    dataset: &FunctionalDataset,
    gamma: &[f64],
    config: &FitConfig,
    weight: Option<&CovarianceModel>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_gamma(dataset, gamma)?;
    let kernel = KernelModel::new(dataset.grid(), KernelSpec::gaussian(config.kernel_nu))?;
    let k = kernel.effective_gram();
    let n = dataset.n();
    let m = dataset.m();
    let p = dataset.p();
    let d = dataset.d();
    let smoother = SmootherSpec::normal_cdf(config.bandwidth_for(n));
    let g = dataset.plane_index(gamma).map(|u| smoother.eval(u));
    let xt = dataset.xtilde();
    let w = DMatrix::from_fn(n, p + d, |i, c| {
        if c < p {
            dataset.x()[(i, c)]
        } else {
            xt[(i, c - p)] * g[i]
        }
    });
    let gram_w = w.tr_mul(&w);
    let kwk = match weight {
        Some(cov) => &k * cov.phi_inv() * &k,
        None => &k * &k,
    };
    let kw = match weight {
        Some(cov) => &k * cov.phi_inv(),
        None => k.clone(),
    };
    let dim = (p + d) * m;
    let ridge = config.lambda * (n * m) as f64;
    let mut a = gram_w.kronecker(&kwk);
    let penalty = DMatrix::<f64>::identity(p + d, p + d).kronecker(&k);
    a += penalty * ridge;
    let wty = w.tr_mul(dataset.y()); // (p+d) x M
    let mut r = DVector::zeros(dim);
    for c in 0..(p + d) {
        let block = &kw * wty.row(c).transpose();
        r.rows_mut(c * m, m).copy_from(&block);
    }
    Ok((a, r))
}
