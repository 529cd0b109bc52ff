//! Score process under the null, its projection-corrected influence terms and
//! the studentized supremum statistic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{membership, CoefficientFunctions, FunctionalDataset};
use crate::error::{Error, Result};
use crate::kernel::KernelModel;

/// Dense `n x k x M` array stored as `[(i * M + m) * k + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Vec<f64>,
    n: usize,
    k: usize,
    m: usize,
}

impl Tensor3 {
    pub fn zeros(n: usize, k: usize, m: usize) -> Self {
        Self {
            data: vec![0.0; n * k * m],
            n,
            k,
            m,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.k, self.m)
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize, m: usize) -> f64 {
        self.data[(i * self.m + m) * self.k + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, m: usize, v: f64) {
        self.data[(i * self.m + m) * self.k + c] = v;
    }

    /// The `k`-vector at subject `i`, grid point `m`.
    pub fn fiber(&self, i: usize, m: usize) -> &[f64] {
        let start = (i * self.m + m) * self.k;
        &self.data[start..start + self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Penalized least squares for `beta` with `delta = 0`.
pub fn null_beta(
    dataset: &FunctionalDataset,
    kernel: &Arc<KernelModel>,
    lambda: f64,
) -> Result<CoefficientFunctions> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if kernel.len() != dataset.m() {
        return Err(Error::Validation("kernel grid does not match dataset grid".into()));
    }
    let n = dataset.n();
    let m = dataset.m();
    let p = dataset.p();
    let u = kernel.eigenvectors();
    let mu = kernel.eigenvalues();
    let xtx = dataset.x().tr_mul(dataset.x());
    let rhs = dataset.x().tr_mul(&(dataset.y() * u)); // p x M
    let ridge = lambda * (n * m) as f64;
    let mut modal = DMatrix::zeros(p, m);
    for j in 0..m {
        let mut a = &xtx * mu[j];
        for r in 0..p {
            a[(r, r)] += ridge;
        }
        let chol = a.cholesky().ok_or(Error::SingularSystem {
            min_eigenvalue: f64::NAN,
        })?;
        modal.set_column(j, &chol.solve(&rhs.column(j).into_owned()));
    }
    let b = modal * u.transpose();
    Ok(CoefficientFunctions {
        b,
        c: DMatrix::zeros(0, m),
        kernel: kernel.clone(),
    })
}

/// `Y_i(s_m) - X_iᵀ β̃(s_m)`.
pub fn null_residuals(dataset: &FunctionalDataset, beta_null: &CoefficientFunctions) -> DMatrix<f64> {
    let beta = &beta_null.b * beta_null.kernel.gram();
    dataset.y() - dataset.x() * beta
}

/// `ψ₁(i, ·, m) = r_i(s_m) X̃_i I(Z_1i + Z_2iᵀ γ > 0)`.
pub fn score_psi1(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    gamma: &[f64],
) -> Tensor3 {
    let resid = null_residuals(dataset, beta_null);
    let member = membership(dataset, gamma);
    let xt = dataset.xtilde();
    let (n, d, m) = (dataset.n(), dataset.d(), dataset.m());
    let mut out = Tensor3::zeros(n, d, m);
    for i in 0..n {
        if !member[i] {
            continue;
        }
        for s in 0..m {
            for c in 0..d {
                out.set(i, c, s, resid[(i, s)] * xt[(i, c)]);
            }
        }
    }
    out
}

/// `ψ₂(i, ·, m') = M⁻¹ Σ_m r_i(s_m) X_i k(s_m, s_m')`.
pub fn score_psi2(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    kernel: &KernelModel,
) -> Tensor3 {
    let resid = null_residuals(dataset, beta_null);
    let smoothed = resid * kernel.gram() / dataset.m() as f64;
    let (n, p, m) = (dataset.n(), dataset.p(), dataset.m());
    let mut out = Tensor3::zeros(n, p, m);
    for i in 0..n {
        for s in 0..m {
            for c in 0..p {
                out.set(i, c, s, smoothed[(i, s)] * dataset.x()[(i, c)]);
            }
        }
    }
    out
}

/// Reusable pieces of the corrected influence that do not depend on gamma.
#[derive(Debug, Clone)]
pub struct InfluenceBasis {
    resid: DMatrix<f64>,
    /// `(r_i K)_m / Σ_m' k(s_m', s_m)`: `Ĵ(s)⁻¹ ψ₂` factors as `Sxx⁻¹ X_i rho_i(s)`.
    rho: DMatrix<f64>,
    sxx_inv: DMatrix<f64>,
    xtilde: DMatrix<f64>,
    /// `Ĵ` needed a pseudo-inverse.
    pub ill_conditioned: bool,
}

/// Condition number of `Ĵ` beyond which a pseudo-inverse is used.
pub const J_CONDITION_LIMIT: f64 = 1e12;

impl InfluenceBasis {
    pub fn new(
        dataset: &FunctionalDataset,
        beta_null: &CoefficientFunctions,
        kernel: &KernelModel,
    ) -> Self {
        let n = dataset.n() as f64;
        let resid = null_residuals(dataset, beta_null);
        let col_sums: Vec<f64> = kernel.gram().column_iter().map(|c| c.sum()).collect();
        let mut rho = &resid * kernel.gram();
        for (j, mut col) in rho.column_iter_mut().enumerate() {
            col /= col_sums[j];
        }
        let sxx = dataset.x().tr_mul(dataset.x()) / n;
        let eig = SymmetricEigen::new(sxx.clone());
        let emax = eig.eigenvalues.max();
        let emin = eig.eigenvalues.min();
        let ill_conditioned = !(emin > 0.0) || emax / emin > J_CONDITION_LIMIT;
        let dim = sxx.nrows();
        let pinv = |a: DMatrix<f64>| a.pseudo_inverse(emax * 1e-12).unwrap_or_else(|_| DMatrix::zeros(dim, dim));
        let sxx_inv = if ill_conditioned {
            pinv(sxx)
        } else {
            match sxx.clone().cholesky() {
                Some(c) => c.inverse(),
                None => pinv(sxx),
            }
        };
        Self {
            resid,
            rho,
            sxx_inv,
            xtilde: dataset.xtilde(),
            ill_conditioned,
        }
    }

    /// `ψ̂₊ = ψ₁ - D̂(γ) Ĵ⁻¹ ψ₂` for a given membership vector.
    pub fn corrected(&self, dataset: &FunctionalDataset, member: &[bool]) -> Tensor3 {
        let (n, d, m) = (dataset.n(), dataset.d(), dataset.m());
        let p = dataset.p();
        let x = dataset.x();
        // D̂ = n⁻¹ Σ_i X̃_i X_iᵀ I_i
        let mut dhat = DMatrix::zeros(d, p);
        for i in 0..n {
            if member[i] {
                for c in 0..d {
                    for k in 0..p {
                        dhat[(c, k)] += self.xtilde[(i, c)] * x[(i, k)];
                    }
                }
            }
        }
        dhat /= n as f64;
        let proj = &dhat * &self.sxx_inv; // d x p
        let a = x * proj.transpose(); // n x d
        let mut out = Tensor3::zeros(n, d, m);
        for i in 0..n {
            let ind = if member[i] { 1.0 } else { 0.0 };
            for s in 0..m {
                let r = self.resid[(i, s)] * ind;
                let rho = self.rho[(i, s)];
                for c in 0..d {
                    out.set(i, c, s, self.xtilde[(i, c)] * r - a[(i, c)] * rho);
                }
            }
        }
        out
    }
}

/// Projection-corrected influence terms at `gamma`; the flag reports whether
/// `Ĵ` needed a pseudo-inverse.
pub fn corrected_influence(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    gamma: &[f64],
    kernel: &KernelModel,
) -> (Tensor3, bool) {
    let basis = InfluenceBasis::new(dataset, beta_null, kernel);
    let member = membership(dataset, gamma);
    let out = basis.corrected(dataset, &member);
    (out, basis.ill_conditioned)
}

/// Relative ridge for near-singular `V̂_S`.
pub const VS_RIDGE: f64 = 1e-8;
/// Eigenvalue ratio treated as near-singular.
pub const VS_CONDITION_LIMIT: f64 = 1e12;

/// Inverse square root of `V̂_S` for one `(s, γ)`, or `None` when it is
/// singular even after stabilization.
pub fn vs_whitener(v: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = v.nrows();
    if d == 1 {
        let x = v[(0, 0)];
        return (x > 0.0 && x.is_finite()).then(|| DMatrix::from_element(1, 1, 1.0 / x.sqrt()));
    }
    let eig = SymmetricEigen::new(v.clone());
    let emax = eig.eigenvalues.max();
    if !(emax > 0.0) || !emax.is_finite() {
        return None;
    }
    let emin = eig.eigenvalues.min();
    let ridge = if emin <= emax / VS_CONDITION_LIMIT {
        VS_RIDGE * eig.eigenvalues.iter().map(|e| e.max(0.0)).sum::<f64>() / d as f64
    } else {
        0.0
    };
    let scale = DVector::from_iterator(
        d,
        eig.eigenvalues.iter().map(|&e| 1.0 / (e.max(0.0) + ridge).sqrt()),
    );
    let u = &eig.eigenvectors;
    Some(u * DMatrix::from_diagonal(&scale) * u.transpose())
}

/// Whitened influence terms `V̂_S(s,γ)^{-1/2} ψ̂₊` laid out as an
/// `n x (M d)` matrix; columns of singular grid points are zero.
/// Returns the matrix and the number of singular grid points.
pub fn whitened_influence(psi: &Tensor3) -> (DMatrix<f64>, usize) {
    let (n, d, m) = psi.shape();
    let mut out = DMatrix::zeros(n, m * d);
    let mut singular = 0;
    let mut v = DMatrix::zeros(d, d);
    for s in 0..m {
        v.fill(0.0);
        for i in 0..n {
            let f = psi.fiber(i, s);
            for a in 0..d {
                for b in 0..=a {
                    v[(a, b)] += f[a] * f[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                v[(b, a)] = v[(a, b)];
            }
        }
        v /= n as f64;
        match vs_whitener(&v) {
            Some(w) => {
                for i in 0..n {
                    let f = psi.fiber(i, s);
                    for a in 0..d {
                        let mut acc = 0.0;
                        for b in 0..d {
                            acc += w[(a, b)] * f[b];
                        }
                        out[(i, s * d + a)] = acc;
                    }
                }
            }
            None => singular += 1,
        }
    }
    (out, singular)
}

/// Statistic of one candidate from its whitened influence matrix:
/// `(nM)⁻¹ Σ_m ‖Σ_i ψ̃_i(s_m)‖²`.
pub fn statistic_from_whitened(white: &DMatrix<f64>, m: usize) -> f64 {
    let n = white.nrows() as f64;
    let sums = white.row_sum();
    sums.iter().map(|v| v * v).sum::<f64>() / (n * m as f64)
}
