#![allow(dead_code)]

use cplane::FunctionalDataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Random dataset with `p` covariates (the first `d` carry the subgroup term),
/// `q - 1` plane covariates beyond the intercept, and responses built from a
/// smooth mean plus noise.
pub fn random_dataset(n: usize, m: usize, p: usize, d: usize, q: usize, seed: u64) -> FunctionalDataset {
    let mut rng = cplane::rng::substream(seed, "test-dataset", 0);
    let mut grid: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect();
    for g in grid.iter_mut() {
        *g += 0.2 / m as f64 * (rng.random::<f64>() - 0.5);
    }
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let z1 = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let z2 = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y = DMatrix::from_fn(n, m, |i, j| {
        let s = grid[j];
        let mut v = x[(i, 0)] * (1.0 + s) + 0.3 * rng.sample::<f64, _>(StandardNormal);
        if z1[i] + z2[(i, q - 1)] > 0.0 {
            v += x[(i, 0)] * (2.0 * s).cos();
        }
        v
    });
    FunctionalDataset::new(y, x, (0..d).collect(), z1, z2, grid).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    max_abs_diff(a, b) / scale
}
