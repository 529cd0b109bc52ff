//! Replication metrics.

/// Share of subjects on which two labelings agree.
pub fn accuracy_rate(truth: &[bool], est: &[bool]) -> f64 {
    assert_eq!(truth.len(), est.len(), "labelings differ in length");
    if truth.is_empty() {
        return 1.0;
    }
    let agree = truth.iter().zip(est).filter(|(a, b)| a == b).count();
    agree as f64 / truth.len() as f64
}

/// Root average squared error over the grid.
pub fn rase(est: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(est.len(), truth.len(), "curves differ in length");
    let ss: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    (ss / est.len() as f64).sqrt()
}

/// Largest absolute entrywise difference.
pub fn sup_error(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = s.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic_fit(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(x, k)| std::iter::repeat_n(x, k)).collect()
}

/// Largest distance between a sequence and its isotonic fit.
pub fn isotonic_deviation(v: &[f64]) -> f64 {
    isotonic_fit(v).iter().zip(v).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Kolmogorov–Smirnov distance between a sample and the uniform law on `[0, 1]`.
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |acc, (i, &x)| {
        let x = x.clamp(0.0, 1.0);
        acc.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
    })
}
