mod common;

use cplane::covariance::{
    assemble_phi, estimate_covariance, estimate_e, estimate_lambda, residual_processes, smooth_nu,
    PHI_STABILIZATION_EPS,
};
use cplane::simulation::{generate, lambda_true, mean, DGPSpec};
use cplane::{fit, weighted_fit, FitConfig, KernelModel, KernelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn residual_processes_match_direct_evaluation() {
    let ds = common::random_dataset(40, 6, 2, 1, 2, 12);
    let f = fit(&ds, &FitConfig::default()).unwrap();
    let resid = residual_processes(&ds, &f);
    let xt = ds.xtilde();
    let index = ds.plane_index(&f.gamma);
    for i in 0..ds.n() {
        let g = normal_cdf(index[i] / f.h);
        for (s, &t) in ds.grid().iter().enumerate() {
            let th = f.theta.evaluate(t);
            let mut fitted = 0.0;
            for c in 0..ds.p() {
                fitted += ds.x()[(i, c)] * th[c];
            }
            for c in 0..ds.d() {
                fitted += xt[(i, c)] * th[ds.p() + c] * g;
            }
            let direct = ds.y()[(i, s)] - fitted;
            assert!((direct - resid[(i, s)]).abs() < 1e-10, "{direct} vs {}", resid[(i, s)]);
        }
    }
}

#[test]
fn zero_coefficients_leave_responses() {
    let ds = common::random_dataset(20, 5, 2, 1, 2, 1);
    let mut f = fit(&ds, &FitConfig::default()).unwrap();
    f.theta.b.fill(0.0);
    f.theta.c.fill(0.0);
    assert_eq!(residual_processes(&ds, &f), ds.y().clone());
}

#[test]
fn error_variance_with_identity_gram_is_scalar_ridge() {
    // grid points far apart relative to the bandwidth: gram = I to machine precision
    let kernel = KernelModel::new(&[0.0, 0.5, 1.0], KernelSpec::gaussian(0.01)).unwrap();
    assert!((kernel.gram() - DMatrix::identity(3, 3)).amax() < 1e-300);
    let c: f64 = 0.36;
    let resid = DMatrix::from_fn(6, 3, |i, _| if i % 2 == 0 { c.sqrt() } else { -c.sqrt() });
    let nu = DMatrix::zeros(6, 3);
    let lambda = 0.2;
    let mu = lambda * 3.0;
    let e = estimate_e(&resid, &nu, &kernel, lambda).unwrap();
    for v in e.iter() {
        assert!((v - c / (1.0 + mu)).abs() < 1e-12, "{v}");
    }
}

#[test]
fn smoothed_processes_solve_the_ridge_system() {
    let ds = common::random_dataset(10, 7, 2, 1, 2, 5);
    let kernel = KernelModel::new(ds.grid(), KernelSpec::gaussian(0.2)).unwrap();
    let lambda = 0.03;
    let (f, nu) = smooth_nu(ds.y(), &kernel, lambda).unwrap();
    let m = ds.m() as f64;
    for i in 0..ds.n() {
        let fi = f.row(i).transpose();
        let lhs = kernel.gram() * &fi + &fi * (lambda * m);
        assert!((lhs - ds.y().row(i).transpose()).amax() < 1e-9);
        assert!((kernel.gram() * &fi - nu.row(i).transpose()).amax() < 1e-12);
    }
}

#[test]
fn covariance_estimates_on_simulated_data() {
    // error variance 0.1 and two-component process; a handful of replications
    let cfg = FitConfig::default();
    let mut e_means = Vec::new();
    for rep in 0..4 {
        let sim = generate(&DGPSpec {
            n: 400,
            m: 30,
            seed: 900 + rep,
            ..DGPSpec::default()
        })
        .unwrap();
        let f = fit(&sim.dataset, &cfg).unwrap();
        let cov = estimate_covariance(&sim.dataset, &cfg, &f).unwrap();
        e_means.push(mean(cov.e_hat_diag.as_slice()));
        let phi = cov.phi_stabilized();
        let id = cov.phi_inv() * &phi;
        assert!((id - DMatrix::identity(30, 30)).amax() < 1e-6);
        let diff = &cov.phi_hat - &cov.lambda_hat - DMatrix::from_diagonal(&cov.e_hat_diag);
        assert!(diff.amax() < 1e-12);
        // symmetric PSD up to round-off
        assert!((&cov.lambda_hat - cov.lambda_hat.transpose()).amax() == 0.0);
        let min_ev = cov.lambda_hat.clone().symmetric_eigenvalues().min();
        assert!(min_ev > -1e-10 * cov.lambda_hat.amax());
        // truth on the same grid, for a loose sanity bound
        let g = sim.dataset.grid();
        let truth = DMatrix::from_fn(30, 30, |a, b| lambda_true(g[a], g[b], [1.0, 0.5f64.sqrt()]));
        assert!((&cov.lambda_hat - truth).amax() < 1.0);
    }
    let avg = mean(&e_means);
    assert!((0.05..=0.20).contains(&avg), "mean E-hat {avg}");
}

#[test]
fn weighted_fit_is_flagged_and_finite() {
    let sim = generate(&DGPSpec {
        n: 150,
        m: 15,
        seed: 31,
        ..DGPSpec::default()
    })
    .unwrap();
    let cfg = FitConfig::default();
    let ls = fit(&sim.dataset, &cfg).unwrap();
    let wls = weighted_fit(&sim.dataset, &cfg, &ls).unwrap();
    assert!(wls.weighted && !ls.weighted);
    assert!(wls.covariance.is_some());
    assert!(wls.gamma.iter().all(|v| v.is_finite()));
    assert_eq!(wls.lambda, ls.lambda);
    assert_eq!(wls.h, ls.h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_inverse_checks_out(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        diag in prop::collection::vec(0.01f64..2.0, 4),
        rows in 1usize..6,
    ) {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let nu = a.rows(0, rows.min(4)).into_owned();
        let lam = estimate_lambda(&nu);
        let cov = assemble_phi(&lam, &DVector::from_vec(diag), PHI_STABILIZATION_EPS).unwrap();
        let id = cov.phi_inv() * cov.phi_stabilized();
        prop_assert!((id - DMatrix::identity(4, 4)).amax() < 1e-6);
        let l = cov.cholesky_factor();
        prop_assert!((l * l.transpose() - cov.phi_stabilized()).amax() < 1e-10);
    }

    #[test]
    fn lambda_hat_is_symmetric_psd(entries in prop::collection::vec(-3.0f64..3.0, 5 * 6)) {
        let nu = DMatrix::from_row_slice(5, 6, &entries);
        let lam = estimate_lambda(&nu);
        prop_assert_eq!(lam.clone(), lam.transpose());
        let min_ev = lam.clone().symmetric_eigenvalues().min();
        prop_assert!(min_ev >= -1e-10 * (1.0 + lam.amax()));
    }
}
