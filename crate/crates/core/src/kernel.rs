//! Kernel evaluation, Gram matrices and regularized symmetric solves.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal load applied before factorizing a Gram matrix.
pub const GRAM_STABILIZER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length-scale of the Gaussian kernel.
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d = s - t;
                (-d * d / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::gaussian(0.2)
    }
}

/// `result[i][j] = k(grid[i], grid[j])`.
pub fn gram_matrix(grid: &[f64], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    validate_grid(grid)?;
    let m = grid.len();
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        gram[(i, i)] = spec.eval(grid[i], grid[i]);
        for j in 0..i {
            let v = spec.eval(grid[i], grid[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::DegenerateGrid(format!(
            "need at least 2 grid points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(Error::DegenerateGrid("non-finite grid point".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateGrid("duplicate grid points".into()));
    }
    Ok(())
}

/// A kernel on a fixed evaluation grid, with its Gram matrix and a cached
/// eigendecomposition of the stabilized Gram matrix.
#[derive(Debug, Clone)]
pub struct KernelModel {
    spec: KernelSpec,
    grid: Vec<f64>,
    gram: DMatrix<f64>,
    stabilizer: f64,
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl KernelModel {
    /// Builds the model. The grid must be sorted ascending with distinct points.
    pub fn new(grid: &[f64], spec: KernelSpec) -> Result<Self> {
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            validate_grid(grid)?;
            return Err(Error::DegenerateGrid("grid must be sorted ascending".into()));
        }
        let gram = gram_matrix(grid, &spec)?;
        let m = grid.len();
        let stabilizer = GRAM_STABILIZER * gram.trace() / m as f64;
        let eig = SymmetricEigen::new(gram.clone());
        let eigenvalues = eig.eigenvalues.map(|e| e.max(0.0) + stabilizer);
        Ok(Self {
            spec,
            grid: grid.to_vec(),
            gram,
            stabilizer,
            eigenvectors: eig.eigenvectors,
            eigenvalues,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Raw Gram matrix `k(s_i, s_j)`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Diagonal load added before factorization.
    pub fn stabilizer(&self) -> f64 {
        self.stabilizer
    }

    /// Gram matrix plus the stabilizing diagonal load; this is the matrix
    /// that all estimators factorize.
    pub fn effective_gram(&self) -> DMatrix<f64> {
        let mut g = self.gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += self.stabilizer;
        }
        g
    }

    /// Orthonormal eigenvectors of the stabilized Gram matrix (columns).
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Eigenvalues of the stabilized Gram matrix.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `K_s = (k(s, s_1), ..., k(s, s_M))`.
    pub fn section(&self, s: f64) -> DVector<f64> {
        kernel_section(s, self)
    }
}

pub fn kernel_section(s: f64, model: &KernelModel) -> DVector<f64> {
    DVector::from_iterator(
        model.grid.len(),
        model.grid.iter().map(|&t| model.spec.eval(s, t)),
    )
}

/// Solves `(A + ridge I) X = B` for symmetric `A`.
///
/// Falls back to a relative diagonal load of `1e-10 trace/dim` when the
/// Cholesky factorization fails, and reports the smallest eigenvalue when the
/// system is still indefinite.
pub fn ridge_solve(a: &DMatrix<f64>, ridge: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Validation(format!(
            "ridge_solve shape mismatch: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
    }
    let mut lhs = a.clone();
    for i in 0..n {
        lhs[(i, i)] += ridge;
    }
    let chol = match Cholesky::new(lhs.clone()) {
        Some(c) => c,
        None => {
            let load = GRAM_STABILIZER * lhs.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
            let mut loaded = lhs.clone();
            for i in 0..n {
                loaded[(i, i)] += load;
            }
            match Cholesky::new(loaded) {
                Some(c) => c,
                None => {
                    let min_eigenvalue = SymmetricEigen::new(lhs)
                        .eigenvalues
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min);
                    return Err(Error::SingularSystem { min_eigenvalue });
                }
            }
        }
    };
    let mut x = chol.solve(b);
    // one step of iterative refinement against the unloaded system
    let resid = b - &lhs * &x;
    x += chol.solve(&resid);
    Ok(x)
}
