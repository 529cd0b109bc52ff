//! Synthetic functional responses with a change-plane subgroup.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DgpMode {
    /// `delta` enters at full size.
    #[default]
    Estimation,
    /// `delta` is scaled by `c / sqrt(n)` (local alternatives).
    Testing,
}

/// Data-generating design. The defaults describe three covariates with
/// AR(0.5) correlation, two of them carrying the subgroup effect, and a
/// two-component random process plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DGPSpec {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub gamma_true: Vec<f64>,
    pub noise_sd_e: f64,
    pub fpc_sds: [f64; 2],
    pub mode: DgpMode,
    pub seed: u64,
}

impl Default for DGPSpec {
    fn default() -> Self {
        Self {
            n: 200,
            m: 30,
            c: 0.0,
            gamma_true: vec![-1.0, 1.0],
            noise_sd_e: 0.1f64.sqrt(),
            fpc_sds: [1.0, 0.5f64.sqrt()],
            mode: DgpMode::Estimation,
            seed: 0,
        }
    }
}

impl DGPSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 || self.m < 2 {
            return Err(Error::Config(format!(
                "simulation needs n >= 8 and M >= 2, got n = {}, M = {}",
                self.n, self.m
            )));
        }
        if self.gamma_true.len() != 2 {
            return Err(Error::Config("gamma_true must have two entries".into()));
        }
        if !(self.noise_sd_e > 0.0) || self.fpc_sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise and component SDs must be positive".into()));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be nonnegative, got {}", self.c)));
        }
        Ok(())
    }
}

pub fn beta_true(s: f64) -> [f64; 3] {
    [(1.0 - s).powi(3), (-s * s).exp(), (PI * s).sin() + s.powi(3)]
}

pub fn delta_true(s: f64) -> [f64; 2] {
    [(1.0 - s).powi(2), (-5.0 * s).exp()]
}

/// Covariance of the random process `nu`, without the white-noise part.
pub fn lambda_true(s: f64, t: f64, fpc_sds: [f64; 2]) -> f64 {
    let (a, b) = (fpc_sds[0] * fpc_sds[0], fpc_sds[1] * fpc_sds[1]);
    2.0 * a * (2.0 * PI * s).sin() * (2.0 * PI * t).sin() + 2.0 * b * (2.0 * PI * s).cos() * (2.0 * PI * t).cos()
}

/// Ground truth of one draw. Function matrices are `components x M`.
#[derive(Debug, Clone)]
pub struct Truth {
    pub beta: DMatrix<f64>,
    /// Effective subgroup effect, after any local-alternative scaling.
    pub delta: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub labels: Vec<bool>,
    pub lambda: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: FunctionalDataset,
    pub truth: Truth,
}

pub fn generate(spec: &DGPSpec) -> Result<Simulated> {
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);

    let mut grid_rng = substream(spec.seed, "dgp-grid", 0);
    let mut grid: Vec<f64> = (0..m).map(|_| grid_rng.random::<f64>()).collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    if grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateGrid("duplicate simulated grid point".into()));
    }

    let scale = match spec.mode {
        DgpMode::Estimation => 1.0,
        DgpMode::Testing => spec.c / (n as f64).sqrt(),
    };
    let beta = DMatrix::from_fn(3, m, |k, j| beta_true(grid[j])[k]);
    let delta = DMatrix::from_fn(2, m, |k, j| scale * delta_true(grid[j])[k]);
    let lambda = DMatrix::from_fn(m, m, |a, b| lambda_true(grid[a], grid[b], spec.fpc_sds));

    // Cholesky factor of the AR(0.5) covariance, written out.
    let ar = DMatrix::from_fn(3, 3, |j, k| 0.5f64.powi((j as i32 - k as i32).abs()));
    let ar_l = ar.cholesky().expect("AR covariance is positive definite").l();

    let mut x = DMatrix::zeros(n, 3);
    let mut z1 = DVector::zeros(n);
    let mut z2 = DMatrix::from_element(n, 2, 1.0);
    let mut y = DMatrix::zeros(n, m);
    let mut labels = Vec::with_capacity(n);
    let sin: Vec<f64> = grid.iter().map(|s| 2f64.sqrt() * (2.0 * PI * s).sin()).collect();
    let cos: Vec<f64> = grid.iter().map(|s| 2f64.sqrt() * (2.0 * PI * s).cos()).collect();
    for i in 0..n {
        let mut rng = substream(spec.seed, "dgp-subject", i as u64);
        let w: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        for j in 0..3 {
            x[(i, j)] = (0..=j).map(|k| ar_l[(j, k)] * w[k]).sum();
        }
        z1[i] = rng.sample(StandardNormal);
        z2[(i, 1)] = 1.0 + rng.sample::<f64, _>(StandardNormal);
        let inside = z1[i] + spec.gamma_true[0] + spec.gamma_true[1] * z2[(i, 1)] > 0.0;
        labels.push(inside);
        let xi1 = spec.fpc_sds[0] * rng.sample::<f64, _>(StandardNormal);
        let xi2 = spec.fpc_sds[1] * rng.sample::<f64, _>(StandardNormal);
        for j in 0..m {
            let mut v = (0..3).map(|k| x[(i, k)] * beta[(k, j)]).sum::<f64>();
            if inside {
                v += x[(i, 0)] * delta[(0, j)] + x[(i, 1)] * delta[(1, j)];
            }
            v += xi1 * sin[j] + xi2 * cos[j];
            v += spec.noise_sd_e * rng.sample::<f64, _>(StandardNormal);
            y[(i, j)] = v;
        }
    }
    let dataset = FunctionalDataset::new(y, x, vec![0, 1], z1, z2, grid)?;
    Ok(Simulated {
        dataset,
        truth: Truth {
            beta,
            delta,
            gamma: spec.gamma_true.clone(),
            labels,
            lambda,
        },
    })
}
