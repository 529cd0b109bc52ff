use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::{ModalBasis, ProfileProblem};
use crate::data::{ChangePlaneFit, FitConfig, FunctionalDataset};
use crate::error::{Error, Result};
use crate::rng::substream;

fn default_level() -> f64 {
    0.95
}
fn default_boot() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    #[serde(default)]
    pub seed: u64,
    /// Points at which bands are reported; defaults to the grid.
    #[serde(default)]
    pub eval_points: Option<Vec<f64>>,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            level: default_level(),
            n_boot: default_boot(),
            seed: 0,
            eval_points: None,
        }
    }
}

/// Percentile bands, one row per coefficient function (`beta` then `delta`),
/// one column per evaluation point.
#[derive(Debug, Clone)]
pub struct PointwiseBands {
    pub points: Vec<f64>,
    pub estimate: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
    pub n_boot: usize,
    pub n_failed: usize,
}

/// Subject-level percentile bootstrap with gamma held at the fitted value.
pub fn pointwise_bands(
    dataset: &FunctionalDataset,
    _config: &FitConfig,
    fit: &ChangePlaneFit,
    bands: &BandConfig,
) -> Result<PointwiseBands> {
    if !(bands.level > 0.0 && bands.level < 1.0) {
        return Err(Error::Config(format!("band level must be in (0, 1), got {}", bands.level)));
    }
    if bands.n_boot < 100 {
        return Err(Error::Config(format!(
            "at least 100 bootstrap draws are required, got {}",
            bands.n_boot
        )));
    }
    let kernel = fit.theta.kernel.clone();
    let basis = Arc::new(match fit.covariance.as_deref() {
        Some(cov) => ModalBasis::weighted(&kernel, cov)?,
        None => ModalBasis::unweighted(&kernel),
    });
    let points = bands
        .eval_points
        .clone()
        .unwrap_or_else(|| dataset.grid().to_vec());
    let estimate = fit.theta.at_points(&points);
    let n = dataset.n();
    let (p, d) = (dataset.p(), dataset.d());

    let draws: Vec<Option<DMatrix<f64>>> = (0..bands.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(bands.seed, "band-bootstrap", b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = dataset.select_subjects(&rows);
            let problem =
                ProfileProblem::with_basis(&sample, kernel.clone(), basis.clone(), fit.lambda, fit.h)
                    .ok()?;
            let solve = problem.solve(&fit.gamma);
            let vals = solve.coefficients(p, d, kernel.clone()).at_points(&points);
            vals.iter().all(|v| v.is_finite()).then_some(vals)
        })
        .collect();
    let ok: Vec<DMatrix<f64>> = draws.into_iter().flatten().collect();
    let n_failed = bands.n_boot - ok.len();
    if n_failed as f64 > 0.1 * bands.n_boot as f64 {
        return Err(Error::Diagnostics(format!(
            "{n_failed} of {} bootstrap refits failed",
            bands.n_boot
        )));
    }
    let alpha = 1.0 - bands.level;
    let (rows, cols) = estimate.shape();
    let mut lower = DMatrix::zeros(rows, cols);
    let mut upper = DMatrix::zeros(rows, cols);
    let mut buf = vec![0.0; ok.len()];
    for r in 0..rows {
        for c in 0..cols {
            for (k, m) in ok.iter().enumerate() {
                buf[k] = m[(r, c)];
            }
            buf.sort_by(|a, b| a.total_cmp(b));
            let est = estimate[(r, c)];
            lower[(r, c)] = quantile_sorted(&buf, alpha / 2.0).min(est);
            upper[(r, c)] = quantile_sorted(&buf, 1.0 - alpha / 2.0).max(est);
        }
    }
    Ok(PointwiseBands {
        points,
        estimate,
        lower,
        upper,
        level: bands.level,
        n_boot: bands.n_boot,
        n_failed,
    })
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
