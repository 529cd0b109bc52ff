//! Monte-Carlo drivers for the estimation and testing studies.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, DGPSpec, DgpMode};
use super::metrics::{accuracy_rate, isotonic_deviation, ks_uniform, mean, median, rase, sd, sup_error};
use crate::covariance::{estimate_covariance, residual_processes, smooth_nu, estimate_lambda, weighted_fit_with};
use crate::data::{ChangePlaneFit, FitConfig};
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::kernel::{KernelModel, KernelSpec};
use crate::rng::child_seed;
use crate::score_test::{run_subgroup_test, TestConfig};

/// Labels of the coefficient functions, in the order RASEs are reported.
pub const COMPONENTS: [&str; 5] = ["beta1", "beta2", "beta3", "delta1", "delta2"];

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ls,
    Wls,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ls => "LS",
            Method::Wls => "WLS",
        }
    }
}

/// One fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRecord {
    pub n: usize,
    pub m: usize,
    pub rep: usize,
    pub method: Method,
    pub gamma: Vec<f64>,
    pub gamma_error: f64,
    pub accuracy: f64,
    pub rase: Vec<f64>,
    /// Sup-norm error of the estimated random-process covariance.
    pub lambda_sup_error: f64,
    pub converged: bool,
    /// Digest of the generated responses, shared by both methods of a replication.
    pub data_digest: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub m: usize,
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    pub gamma_bias: Vec<f64>,
    pub gamma_sd: Vec<f64>,
    pub gamma_error_median: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub rase_mean: Vec<f64>,
    pub rase_sd: Vec<f64>,
    pub rase_median: Vec<f64>,
    pub lambda_sup_median: f64,
    /// Share of replications with covariance sup error below 0.25.
    pub lambda_sup_below_025: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationStudy {
    pub cells: Vec<CellSummary>,
    pub records: Vec<EstimationRecord>,
    pub failures: Vec<String>,
}

impl EstimationStudy {
    pub fn cell(&self, n: usize, m: usize, method: Method) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.m == m && c.method == method)
    }
}

fn digest(y: &nalgebra::DMatrix<f64>) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in y.iter() {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn rases(fit: &ChangePlaneFit, truth: &super::dgp::Truth) -> Vec<f64> {
    let est = fit.theta.on_grid();
    let mut out = Vec::with_capacity(5);
    for k in 0..3 {
        out.push(rase(est.row(k).transpose().as_slice(), truth.beta.row(k).transpose().as_slice()));
    }
    for k in 0..2 {
        out.push(rase(est.row(3 + k).transpose().as_slice(), truth.delta.row(k).transpose().as_slice()));
    }
    out
}

fn lambda_error(
    dataset: &crate::data::FunctionalDataset,
    config: &FitConfig,
    fit: &ChangePlaneFit,
    truth: &super::dgp::Truth,
) -> Result<f64> {
    let kernel = KernelModel::new(dataset.grid(), KernelSpec::gaussian(config.kernel_nu))?;
    let resid = residual_processes(dataset, fit);
    let (_, nu) = smooth_nu(&resid, &kernel, config.covariance_lambda())?;
    Ok(sup_error(&estimate_lambda(&nu), &truth.lambda))
}

fn one_replication(
    n: usize,
    m: usize,
    rep: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<[EstimationRecord; 2]> {
    let spec = DGPSpec {
        n,
        m,
        seed: child_seed(seed, &format!("estimation-{n}-{m}"), rep as u64),
        ..DGPSpec::default()
    };
    let sim = generate(&spec)?;
    let ds = &sim.dataset;
    let data_digest = digest(ds.y());
    let mut cfg = config.clone();
    cfg.seed = child_seed(spec.seed, "fit", 0);

    let record = |fit: &ChangePlaneFit, method, lam_err, secs| EstimationRecord {
        n,
        m,
        rep,
        method,
        gamma: fit.gamma.clone(),
        gamma_error: fit
            .gamma
            .iter()
            .zip(&sim.truth.gamma)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        accuracy: accuracy_rate(&sim.truth.labels, &fit.membership(ds)),
        rase: rases(fit, &sim.truth),
        lambda_sup_error: lam_err,
        converged: fit.converged,
        data_digest,
        seconds: secs,
    };

    let t0 = Instant::now();
    let ls = fit(ds, &cfg)?;
    let ls_secs = t0.elapsed().as_secs_f64();
    let lam_err = lambda_error(ds, &cfg, &ls, &sim.truth)?;
    let t1 = Instant::now();
    let cov = estimate_covariance(ds, &cfg, &ls)?;
    let wls = weighted_fit_with(ds, &cfg, &ls, cov)?;
    let wls_secs = t1.elapsed().as_secs_f64();
    Ok([
        record(&ls, Method::Ls, lam_err, ls_secs),
        record(&wls, Method::Wls, lam_err, wls_secs),
    ])
}

fn summarize(n: usize, m: usize, method: Method, recs: &[&EstimationRecord], failures: usize, gamma_true: &[f64]) -> CellSummary {
    let q = gamma_true.len();
    let col = |f: &dyn Fn(&EstimationRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let gamma_bias = (0..q).map(|k| mean(&col(&|r| r.gamma[k])) - gamma_true[k]).collect();
    let gamma_sd = (0..q).map(|k| sd(&col(&|r| r.gamma[k]))).collect();
    let acc = col(&|r| r.accuracy);
    let lam = col(&|r| r.lambda_sup_error);
    CellSummary {
        n,
        m,
        method,
        reps: recs.len(),
        failures,
        gamma_bias,
        gamma_sd,
        gamma_error_median: median(&col(&|r| r.gamma_error)),
        accuracy_mean: mean(&acc),
        accuracy_sd: sd(&acc),
        rase_mean: (0..5).map(|k| mean(&col(&|r| r.rase[k]))).collect(),
        rase_sd: (0..5).map(|k| sd(&col(&|r| r.rase[k]))).collect(),
        rase_median: (0..5).map(|k| median(&col(&|r| r.rase[k]))).collect(),
        lambda_sup_median: median(&lam),
        lambda_sup_below_025: lam.iter().filter(|&&e| e < 0.25).count() as f64 / lam.len().max(1) as f64,
        seconds: col(&|r| r.seconds).iter().sum(),
    }
}

/// LS and WLS fits on matched datasets for every `(n, M)` cell.
/// Failed replications are recorded; more than 5% failures in a cell is an error.
pub fn run_estimation_study(
    cells: &[(usize, usize)],
    reps: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<EstimationStudy> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    config.validate()?;
    let gamma_true = DGPSpec::default().gamma_true;
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &(n, m) in cells {
        let outcomes: Vec<Result<[EstimationRecord; 2]>> = (0..reps)
            .into_par_iter()
            .map(|rep| one_replication(n, m, rep, config, seed))
            .collect();
        let mut cell_records = Vec::new();
        let mut cell_failures = 0;
        for (rep, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(pair) => cell_records.extend(pair),
                Err(e) => {
                    cell_failures += 1;
                    failures.push(format!("n={n} M={m} rep={rep}: {e}"));
                }
            }
        }
        if cell_failures as f64 > MAX_FAILURE_RATE * reps as f64 {
            return Err(Error::Study(format!(
                "{cell_failures} of {reps} replications failed at n={n}, M={m}"
            )));
        }
        for method in [Method::Ls, Method::Wls] {
            let recs: Vec<&EstimationRecord> = cell_records.iter().filter(|r| r.method == method).collect();
            summaries.push(summarize(n, m, method, &recs, cell_failures, &gamma_true));
        }
        records.extend(cell_records);
    }
    Ok(EstimationStudy {
        cells: summaries,
        records,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub c: f64,
    pub power: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub failures: usize,
    pub p_values: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudy {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub points: Vec<PowerPoint>,
    pub failures: Vec<String>,
}

impl PowerStudy {
    pub fn powers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.power).collect()
    }

    /// Distance between the power curve and its nondecreasing fit.
    pub fn isotonic_deviation(&self) -> f64 {
        isotonic_deviation(&self.powers())
    }

    /// KS distance from uniform of the p-values at `c = 0`, if present.
    pub fn null_ks(&self) -> Option<f64> {
        self.points.iter().find(|p| p.c == 0.0).map(|p| ks_uniform(&p.p_values))
    }
}

/// Nominal level of the power study.
pub const ALPHA: f64 = 0.05;

/// Rejection rates of the score test over a grid of local-alternative sizes.
/// Replication `r` reuses the same covariates and noise for every `c`.
#[allow(clippy::too_many_arguments)]
pub fn run_power_study(
    c_grid: &[f64],
    n: usize,
    m: usize,
    b: usize,
    q: usize,
    reps: usize,
    test: &TestConfig,
    fit_lambda: f64,
    seed: u64,
) -> Result<PowerStudy> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let mut cfg = test.clone();
    cfg.b = b;
    cfg.q = q;
    cfg.validate()?;
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for &c in c_grid {
        let t0 = Instant::now();
        let outcomes: Vec<Result<f64>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let spec = DGPSpec {
                    n,
                    m,
                    c,
                    mode: DgpMode::Testing,
                    seed: child_seed(seed, "power-rep", rep as u64),
                    ..DGPSpec::default()
                };
                let sim = generate(&spec)?;
                let mut rc = cfg.clone();
                rc.seed = child_seed(spec.seed, "test", 0);
                let (res, _) = run_subgroup_test(&sim.dataset, &rc, fit_lambda)?;
                Ok(res.p_value)
            })
            .collect();
        let mut p_values = Vec::with_capacity(reps);
        let mut fails = 0;
        for (rep, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(p) => p_values.push(p),
                Err(e) => {
                    fails += 1;
                    failures.push(format!("c={c} rep={rep}: {e}"));
                }
            }
        }
        if fails as f64 > MAX_FAILURE_RATE * reps as f64 {
            return Err(Error::Study(format!("{fails} of {reps} tests failed at c={c}")));
        }
        let k = p_values.len() as f64;
        let power = p_values.iter().filter(|&&p| p <= ALPHA).count() as f64 / k;
        points.push(PowerPoint {
            c,
            power,
            mc_se: (power * (1.0 - power) / k).sqrt(),
            reps,
            failures: fails,
            p_values,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(PowerStudy {
        n,
        m,
        alpha: ALPHA,
        points,
        failures,
    })
}
