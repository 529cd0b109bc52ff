use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMode {
    /// Slopes fixed; intercepts at minus the `a`-percentile of the induced
    /// index for `a` equally spaced in `[0.2, 0.8]`.
    #[default]
    PercentileLine,
    /// Slopes drawn uniformly on the sphere, intercepts from random percentiles.
    RandomDirections,
}

/// Candidate grouping parameters over which the score statistic is maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaFamily {
    pub candidates: Vec<Vec<f64>>,
    pub mode: FamilyMode,
}

impl GammaFamily {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Lowest admissible subgroup fraction.
pub const DEFAULT_FRAC_MIN: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct FamilySpec<'a> {
    pub count: usize,
    pub mode: FamilyMode,
    /// Slope coordinates `gamma[1..]` for percentile-line mode; defaults to ones.
    pub slopes: Option<&'a [f64]>,
    pub frac_min: f64,
    pub seed: u64,
}

pub fn build_gamma_family(dataset: &FunctionalDataset, spec: &FamilySpec<'_>) -> Result<GammaFamily> {
    if spec.count == 0 {
        return Err(Error::Config("gamma family size must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&spec.frac_min) {
        return Err(Error::Config(format!(
            "frac_min must lie in [0, 0.5), got {}",
            spec.frac_min
        )));
    }
    let q = dataset.q();
    let n = dataset.n() as f64;
    let admissible = |gamma: &[f64]| {
        let inside = dataset.plane_index(gamma).iter().filter(|&&u| u > 0.0).count() as f64 / n;
        inside >= spec.frac_min && inside <= 1.0 - spec.frac_min
    };
    let candidate_at = |slopes: &[f64], a: f64| -> Vec<f64> {
        let index = induced_index(dataset, slopes);
        let mut sorted: Vec<f64> = index.iter().cloned().collect();
        sorted.sort_by(|x, y| x.total_cmp(y));
        let mut gamma = Vec::with_capacity(q);
        gamma.push(-quantile_sorted(&sorted, a));
        gamma.extend_from_slice(slopes);
        gamma
    };

    let candidates = match spec.mode {
        FamilyMode::PercentileLine => {
            let ones = vec![1.0; q - 1];
            let slopes = spec.slopes.unwrap_or(&ones);
            if slopes.len() != q - 1 {
                return Err(Error::Config(format!(
                    "family slopes must have length q - 1 = {}, got {}",
                    q - 1,
                    slopes.len()
                )));
            }
            let cands: Vec<Vec<f64>> = (0..spec.count)
                .map(|k| {
                    let a = if spec.count == 1 {
                        0.5
                    } else {
                        0.2 + 0.6 * k as f64 / (spec.count - 1) as f64
                    };
                    candidate_at(slopes, a)
                })
                .filter(|g| admissible(g))
                .collect();
            if cands.is_empty() {
                return Err(Error::FamilyConstruction(
                    "no percentile-line candidate satisfies the subgroup-fraction bound".into(),
                ));
            }
            cands
        }
        FamilyMode::RandomDirections => {
            let mut rng = substream(spec.seed, "gamma-family", 0);
            let mut cands = Vec::with_capacity(spec.count);
            let max_draws = 100 * spec.count;
            let mut draws = 0;
            while cands.len() < spec.count {
                if draws >= max_draws {
                    return Err(Error::FamilyConstruction(format!(
                        "only {} of {} admissible candidates after {max_draws} draws",
                        cands.len(),
                        spec.count
                    )));
                }
                draws += 1;
                let mut u: Vec<f64> = (0..q - 1).map(|_| rng.sample(StandardNormal)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if q > 1 {
                    if norm == 0.0 {
                        continue;
                    }
                    u.iter_mut().for_each(|v| *v /= norm);
                }
                let a: f64 = rng.random_range(0.2..0.8);
                let g = candidate_at(&u, a);
                if admissible(&g) {
                    cands.push(g);
                }
            }
            cands
        }
    };
    Ok(GammaFamily {
        candidates,
        mode: spec.mode,
    })
}

/// `Z1 + Σ_k slopes[k] Z2[:, k+1]`.
pub fn induced_index(dataset: &FunctionalDataset, slopes: &[f64]) -> DVector<f64> {
    let mut idx = dataset.z1().clone();
    for (k, &s) in slopes.iter().enumerate() {
        idx += dataset.z2().column(k + 1) * s;
    }
    idx
}

fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
