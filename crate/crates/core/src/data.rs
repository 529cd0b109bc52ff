//! Dataset and parameter containers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::kernel::KernelModel;

/// Affine map from the unit-interval grid used internally back to the
/// original measurement scale: `original = offset + scale * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScale {
    pub offset: f64,
    pub scale: f64,
}

impl GridScale {
    pub const IDENTITY: GridScale = GridScale {
        offset: 0.0,
        scale: 1.0,
    };

    pub fn to_original(&self, s: f64) -> f64 {
        self.offset + self.scale * s
    }

    pub fn to_unit(&self, s: f64) -> f64 {
        (s - self.offset) / self.scale
    }
}

impl Default for GridScale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Functional responses on a shared grid with scalar covariates.
///
/// `z2` carries the intercept in its first column; the change-plane index of
/// subject `i` is `z1[i] + z2.row(i) . gamma`.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    xtilde_idx: Vec<usize>,
    z1: DVector<f64>,
    z2: DMatrix<f64>,
    grid: Vec<f64>,
    subject_ids: Vec<String>,
    grid_scale: GridScale,
}

impl FunctionalDataset {
    pub fn new(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        xtilde_idx: Vec<usize>,
        z1: DVector<f64>,
        z2: DMatrix<f64>,
        grid: Vec<f64>,
    ) -> Result<Self> {
        let n = y.nrows();
        let ids = (1..=n).map(|i| i.to_string()).collect();
        Self::with_metadata(y, x, xtilde_idx, z1, z2, grid, ids, GridScale::IDENTITY)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_metadata(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        xtilde_idx: Vec<usize>,
        z1: DVector<f64>,
        z2: DMatrix<f64>,
        grid: Vec<f64>,
        subject_ids: Vec<String>,
        grid_scale: GridScale,
    ) -> Result<Self> {
        let n = y.nrows();
        let m = y.ncols();
        let p = x.ncols();
        let d = xtilde_idx.len();
        let q = z2.ncols();
        if grid.len() != m {
            return Err(Error::Validation(format!(
                "grid has {} points but responses have {m} columns",
                grid.len()
            )));
        }
        if x.nrows() != n || z1.len() != n || z2.nrows() != n || subject_ids.len() != n {
            return Err(Error::Validation(format!(
                "row count mismatch: Y {n}, X {}, Z1 {}, Z2 {}, ids {}",
                x.nrows(),
                z1.len(),
                z2.nrows(),
                subject_ids.len()
            )));
        }
        if p == 0 || d == 0 || d > p {
            return Err(Error::Validation(format!(
                "need 1 <= d <= p, got p = {p}, d = {d}"
            )));
        }
        if let Some(&bad) = xtilde_idx.iter().find(|&&k| k >= p) {
            return Err(Error::Validation(format!(
                "xtilde column index {bad} out of range for p = {p}"
            )));
        }
        let mut uniq = xtilde_idx.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != d {
            return Err(Error::Validation("duplicate xtilde column index".into()));
        }
        if q == 0 || z2.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Validation(
                "first column of Z2 must be the intercept (all ones)".into(),
            ));
        }
        if n < p + d + q {
            return Err(Error::Validation(format!(
                "need n >= p + d + q = {}, got n = {n}",
                p + d + q
            )));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("grid must be strictly increasing".into()));
        }
        check_finite("Y", &y)?;
        check_finite("X", &x)?;
        check_finite("Z2", &z2)?;
        if let Some(i) = z1.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite Z1 at row {i}")));
        }
        if let Some(i) = grid.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite grid point {i}")));
        }
        Ok(Self {
            y,
            x,
            xtilde_idx,
            z1,
            z2,
            grid,
            subject_ids,
            grid_scale,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn m(&self) -> usize {
        self.y.ncols()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn d(&self) -> usize {
        self.xtilde_idx.len()
    }
    pub fn q(&self) -> usize {
        self.z2.ncols()
    }
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn xtilde_idx(&self) -> &[usize] {
        &self.xtilde_idx
    }
    pub fn z1(&self) -> &DVector<f64> {
        &self.z1
    }
    pub fn z2(&self) -> &DMatrix<f64> {
        &self.z2
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    pub fn grid_scale(&self) -> GridScale {
        self.grid_scale
    }

    /// `n x d` matrix of the subgroup covariates.
    pub fn xtilde(&self) -> DMatrix<f64> {
        self.x.select_columns(self.xtilde_idx.iter())
    }

    /// Change-plane index `Z1 + Z2 gamma` for every subject.
    pub fn plane_index(&self, gamma: &[f64]) -> DVector<f64> {
        assert_eq!(gamma.len(), self.q(), "gamma has wrong length");
        let g = DVector::from_column_slice(gamma);
        &self.z1 + &self.z2 * g
    }

    /// Subset of subjects (rows may repeat).
    pub fn select_subjects(&self, rows: &[usize]) -> Self {
        Self {
            y: self.y.select_rows(rows.iter()),
            x: self.x.select_rows(rows.iter()),
            xtilde_idx: self.xtilde_idx.clone(),
            z1: self.z1.select_rows(rows.iter()),
            z2: self.z2.select_rows(rows.iter()),
            grid: self.grid.clone(),
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
            grid_scale: self.grid_scale,
        }
    }

    /// Same covariates with a different response matrix.
    pub fn with_responses(&self, y: DMatrix<f64>) -> Result<Self> {
        if y.shape() != self.y.shape() {
            return Err(Error::Validation("response shape mismatch".into()));
        }
        check_finite("Y", &y)?;
        Ok(Self { y, ..self.clone() })
    }

    /// Same data with the covariate columns entering `Z1`/`Z2` replaced.
    pub fn with_plane_covariates(&self, z1: DVector<f64>, z2: DMatrix<f64>) -> Result<Self> {
        Self::with_metadata(
            self.y.clone(),
            self.x.clone(),
            self.xtilde_idx.clone(),
            z1,
            z2,
            self.grid.clone(),
            self.subject_ids.clone(),
            self.grid_scale,
        )
    }
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite {name} entry at row {i}, column {j}"
                )));
            }
        }
    }
    Ok(())
}

/// `I(Z1 + Z2 gamma > 0)` per subject.
pub fn membership(dataset: &FunctionalDataset, gamma: &[f64]) -> Vec<bool> {
    dataset.plane_index(gamma).iter().map(|&u| u > 0.0).collect()
}

/// Representer coefficients of `beta` (rows of `b`) and `delta` (rows of `c`).
#[derive(Debug, Clone)]
pub struct CoefficientFunctions {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub kernel: Arc<KernelModel>,
}

impl CoefficientFunctions {
    pub fn zeros(p: usize, d: usize, kernel: Arc<KernelModel>) -> Self {
        let m = kernel.len();
        Self {
            b: DMatrix::zeros(p, m),
            c: DMatrix::zeros(d, m),
            kernel,
        }
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn d(&self) -> usize {
        self.c.nrows()
    }

    /// Stacked coefficient rows `[b; c]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let m = self.kernel.len();
        let mut out = DMatrix::zeros(self.p() + self.d(), m);
        out.rows_mut(0, self.p()).copy_from(&self.b);
        out.rows_mut(self.p(), self.d()).copy_from(&self.c);
        out
    }

    /// Values of all `p + d` functions on the kernel grid, one row per function.
    pub fn on_grid(&self) -> DMatrix<f64> {
        self.stacked() * self.kernel.gram()
    }

    /// Values of all `p + d` functions at arbitrary points, one column per point.
    pub fn at_points(&self, points: &[f64]) -> DMatrix<f64> {
        let m = self.kernel.len();
        let mut sections = DMatrix::zeros(m, points.len());
        for (j, &s) in points.iter().enumerate() {
            sections.set_column(j, &self.kernel.section(s));
        }
        self.stacked() * sections
    }

    /// Functions whose coefficients are all zero evaluate to zero; otherwise
    /// `(b K_s, c K_s)`.
    pub fn evaluate(&self, s: f64) -> DVector<f64> {
        evaluate_theta(self, s)
    }
}

pub fn evaluate_theta(theta: &CoefficientFunctions, s: f64) -> DVector<f64> {
    let sec = theta.kernel.section(s);
    let beta = &theta.b * &sec;
    let delta = &theta.c * &sec;
    DVector::from_iterator(
        beta.len() + delta.len(),
        beta.iter().chain(delta.iter()).cloned(),
    )
}

fn default_lambda() -> f64 {
    0.01
}
fn default_nu() -> f64 {
    0.2
}
fn default_max_iter() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-6
}
fn default_folds() -> usize {
    5
}
fn default_box() -> (f64, f64) {
    (-5.0, 5.0)
}
fn default_screen() -> usize {
    256
}
fn default_restarts() -> usize {
    5
}

/// Tuning for the change-plane estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Smoothing bandwidth `h`; `None` means `n^{-1/2} log n`.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default = "default_nu")]
    pub kernel_nu: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub gamma_init: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Per-coordinate search box for gamma.
    #[serde(default = "default_box")]
    pub gamma_box: (f64, f64),
    #[serde(default = "default_screen")]
    pub screen_points: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// When set (and `q <= 2`), gamma is searched on a regular grid with
    /// this many points per coordinate instead of the screen + simplex scheme.
    #[serde(default)]
    pub grid_search: Option<usize>,
    /// Ridge for residual smoothing in the covariance step; defaults to `lambda`.
    #[serde(default)]
    pub lambda_cov: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            h: None,
            kernel_nu: default_nu(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            gamma_init: None,
            lambda_grid: None,
            cv_folds: default_folds(),
            gamma_box: default_box(),
            screen_points: default_screen(),
            restarts: default_restarts(),
            grid_search: None,
            lambda_cov: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(h) = self.h {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!("h must be positive, got {h}")));
            }
        }
        if !(self.kernel_nu > 0.0) {
            return Err(Error::Config(format!(
                "kernel_nu must be positive, got {}",
                self.kernel_nu
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.gamma_box.0 < self.gamma_box.1) {
            return Err(Error::Config("gamma_box must have lower < upper".into()));
        }
        if let Some(lc) = self.lambda_cov {
            if !(lc > 0.0) {
                return Err(Error::Config(format!("lambda_cov must be positive, got {lc}")));
            }
        }
        Ok(())
    }

    /// Bandwidth actually used for a sample of size `n`.
    pub fn bandwidth_for(&self, n: usize) -> f64 {
        self.h.unwrap_or_else(|| default_bandwidth(n))
    }

    pub fn covariance_lambda(&self) -> f64 {
        self.lambda_cov.unwrap_or(self.lambda)
    }
}

/// `h = n^{-1/2} log n`.
pub fn default_bandwidth(n: usize) -> f64 {
    let n = n as f64;
    n.ln() / n.sqrt()
}

/// Result of the alternating estimation procedure.
#[derive(Debug, Clone)]
pub struct ChangePlaneFit {
    pub theta: CoefficientFunctions,
    pub gamma: Vec<f64>,
    /// Profiled (unpenalized, smoothed) loss after each outer iteration.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub weighted: bool,
    pub lambda: f64,
    pub h: f64,
    /// Covariance model used as the weight, for weighted fits.
    pub covariance: Option<Arc<CovarianceModel>>,
    /// Set when the gamma objective was numerically flat.
    pub flat_objective: bool,
}

impl ChangePlaneFit {
    pub fn membership(&self, dataset: &FunctionalDataset) -> Vec<bool> {
        membership(dataset, &self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;

    fn tiny(z1: &[f64], z2: &[f64], q: usize) -> FunctionalDataset {
        let n = z1.len();
        let m = 3;
        FunctionalDataset::new(
            DMatrix::from_fn(n, m, |i, j| (i + j) as f64),
            DMatrix::from_fn(n, 1, |i, _| i as f64 - 1.0),
            vec![0],
            DVector::from_column_slice(z1),
            DMatrix::from_row_slice(n, q, z2),
            vec![0.0, 0.5, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn membership_simple() {
        let ds = tiny(&[1.0, -1.0, 0.5], &[1.0, 1.0, 1.0], 1);
        assert_eq!(membership(&ds, &[0.0]), vec![true, false, true]);
        assert_eq!(membership(&ds, &[-10.0]), vec![false, false, false]);
    }

    #[test]
    fn membership_two_coordinates() {
        // index = z1 - 1 + z2*
        let ds = tiny(
            &[0.5, -0.5, 2.0, -2.0],
            &[1.0, 1.0, 1.0, 0.2, 1.0, 0.0, 1.0, 4.0],
            2,
        );
        // 0.5-1+1=0.5, -0.5-1+0.2=-1.3, 2-1+0=1, -2-1+4=1
        assert_eq!(membership(&ds, &[-1.0, 1.0]), vec![true, false, true, true]);
    }

    #[test]
    fn membership_invariant_to_joint_scaling() {
        let z1 = [0.3, -1.2, 2.0, -0.1, 0.7];
        let z2s = [0.4, 1.5, -2.0, 0.05, -0.6];
        let gamma = [-0.2, 0.8];
        let mk = |scale: f64| {
            let z1s: Vec<f64> = z1.iter().map(|v| v * scale).collect();
            let mut z2 = Vec::new();
            for v in z2s {
                z2.push(1.0);
                z2.push(v * scale);
            }
            // scaling the intercept column is emulated by scaling gamma[0]
            let ds = tiny(&z1s, &z2, 2);
            membership(&ds, &[gamma[0] * scale, gamma[1]])
        };
        assert_eq!(mk(1.0), mk(3.7));
    }

    #[test]
    fn dataset_validation() {
        let n = 4;
        let mk = |z2: DMatrix<f64>, xt: Vec<usize>| {
            FunctionalDataset::new(
                DMatrix::zeros(n, 2),
                DMatrix::zeros(n, 1),
                xt,
                DVector::zeros(n),
                z2,
                vec![0.0, 1.0],
            )
        };
        assert!(mk(DMatrix::from_element(n, 1, 1.0), vec![0]).is_ok());
        assert!(mk(DMatrix::from_element(n, 1, 2.0), vec![0]).is_err());
        assert!(mk(DMatrix::from_element(n, 1, 1.0), vec![1]).is_err());
        assert!(mk(DMatrix::from_element(n, 1, 1.0), vec![]).is_err());
        let y = DMatrix::from_element(n, 2, f64::NAN);
        let err = FunctionalDataset::new(
            y,
            DMatrix::zeros(n, 1),
            vec![0],
            DVector::zeros(n),
            DMatrix::from_element(n, 1, 1.0),
            vec![0.0, 1.0],
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn evaluate_theta_cases() {
        let kernel = Arc::new(KernelModel::new(&[0.0, 0.3, 0.7], KernelSpec::gaussian(0.2)).unwrap());
        let zero = CoefficientFunctions::zeros(2, 1, kernel.clone());
        assert!(evaluate_theta(&zero, 0.4).iter().all(|&v| v == 0.0));

        let mut theta = CoefficientFunctions::zeros(2, 1, kernel.clone());
        theta.b[(0, 0)] = 1.0;
        assert_relative_eq!(evaluate_theta(&theta, 0.2)[0], (-0.5f64).exp(), epsilon = 1e-15);

        theta.b = DMatrix::from_fn(2, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
        theta.c = DMatrix::from_fn(1, 3, |_, j| j as f64 * 0.3);
        let grid_vals = theta.on_grid();
        for (j, &s) in kernel.grid().iter().enumerate() {
            let v = evaluate_theta(&theta, s);
            for k in 0..3 {
                assert_relative_eq!(v[k], grid_vals[(k, j)], epsilon = 1e-14);
            }
        }
    }
}
