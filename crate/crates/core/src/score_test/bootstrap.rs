//! Supremum statistic over a candidate family and its multiplier-bootstrap
//! null distribution.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::score::{statistic_from_whitened, whitened_influence, InfluenceBasis};
use super::{GammaFamily, SubgroupTestResult};
use crate::data::{membership, CoefficientFunctions, FunctionalDataset};
use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::rng::substream;

/// Smallest accepted number of bootstrap draws.
pub const MIN_BOOTSTRAP: usize = 100;

/// Candidates handled per parallel task.
const BLOCK: usize = 8;

/// Per-candidate observed statistics and, when multipliers are supplied,
/// the per-draw supremum over the family.
#[derive(Debug, Clone)]
pub struct FamilyEvaluation {
    pub per_gamma: Vec<f64>,
    pub boot_max: Vec<f64>,
    pub warnings: Vec<String>,
    pub ill_conditioned: bool,
}

/// Multiplier matrix `Ξ` (`B x n`); row `b` comes from its own substream, so
/// the draws do not depend on how the work is split.
pub fn multipliers(seed: u64, b: usize, n: usize) -> DMatrix<f64> {
    let mut xi = DMatrix::zeros(b, n);
    for r in 0..b {
        let mut rng = substream(seed, "multiplier", r as u64);
        for i in 0..n {
            xi[(r, i)] = rng.sample(StandardNormal);
        }
    }
    xi
}

/// Evaluate the studentized statistic for every candidate. Candidates that
/// induce the same membership share one computation.
pub fn evaluate_family(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    family: &GammaFamily,
    kernel: &KernelModel,
    xi: Option<&DMatrix<f64>>,
) -> FamilyEvaluation {
    let basis = InfluenceBasis::new(dataset, beta_null, kernel);
    let m = dataset.m();
    let n_boot = xi.map_or(0, |x| x.nrows());

    let mut unique: Vec<Vec<bool>> = Vec::new();
    let mut owner = Vec::with_capacity(family.len());
    let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
    for gamma in &family.candidates {
        let member = membership(dataset, gamma);
        let idx = *seen.entry(member.clone()).or_insert_with(|| {
            unique.push(member);
            unique.len() - 1
        });
        owner.push(idx);
    }

    struct Block {
        stats: Vec<(f64, Option<String>)>,
        boot: Vec<f64>,
    }

    let blocks: Vec<Block> = unique
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut stats = Vec::with_capacity(chunk.len());
            let mut boot = vec![0.0; n_boot];
            for member in chunk {
                let psi = basis.corrected(dataset, member);
                let (white, singular) = whitened_influence(&psi);
                if 2 * singular > m {
                    stats.push((
                        0.0,
                        Some(format!(
                            "score variance singular at {singular} of {m} grid points; statistic set to 0"
                        )),
                    ));
                    continue;
                }
                stats.push((statistic_from_whitened(&white, m), None));
                if let Some(xi) = xi {
                    let scale = 1.0 / (dataset.n() * m) as f64;
                    let perturbed = xi * &white;
                    for (r, slot) in boot.iter_mut().enumerate() {
                        let t = perturbed.row(r).iter().map(|v| v * v).sum::<f64>() * scale;
                        if t > *slot {
                            *slot = t;
                        }
                    }
                }
            }
            Block { stats, boot }
        })
        .collect();

    let mut unique_stats = Vec::with_capacity(unique.len());
    let mut warnings = Vec::new();
    let mut boot_max = vec![0.0; n_boot];
    for block in blocks {
        for (stat, warn) in block.stats {
            unique_stats.push(stat);
            if let Some(w) = warn {
                warnings.push(w);
            }
        }
        for (slot, v) in boot_max.iter_mut().zip(block.boot) {
            *slot = f64::max(*slot, v);
        }
    }
    if basis.ill_conditioned {
        warnings.push("design second-moment matrix ill-conditioned; pseudo-inverse used".into());
    }
    FamilyEvaluation {
        per_gamma: owner.iter().map(|&k| unique_stats[k]).collect(),
        boot_max,
        warnings,
        ill_conditioned: basis.ill_conditioned,
    }
}

/// `(T_obs, per_gamma)` with `T_obs` the maximum over the family.
pub fn test_statistic(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    family: &GammaFamily,
    kernel: &KernelModel,
) -> (f64, Vec<f64>) {
    let eval = evaluate_family(dataset, beta_null, family, kernel, None);
    let t = eval.per_gamma.iter().copied().fold(0.0, f64::max);
    (t, eval.per_gamma)
}

/// Multiplier-bootstrap p-value `#{T*_b > T_obs} / B`. The score variance is
/// computed once from the observed influence terms and reused for every draw.
pub fn bootstrap_pvalue(
    dataset: &FunctionalDataset,
    beta_null: &CoefficientFunctions,
    family: &GammaFamily,
    kernel: &KernelModel,
    b: usize,
    seed: u64,
) -> Result<SubgroupTestResult> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::Config(format!(
            "bootstrap draws must be at least {MIN_BOOTSTRAP}, got {b}"
        )));
    }
    if family.is_empty() {
        return Err(Error::FamilyConstruction("empty gamma family".into()));
    }
    let xi = multipliers(seed, b, dataset.n());
    let eval = evaluate_family(dataset, beta_null, family, kernel, Some(&xi));
    let t_obs = eval.per_gamma.iter().copied().fold(0.0, f64::max);
    let exceed = eval.boot_max.iter().filter(|&&t| t > t_obs).count();
    Ok(SubgroupTestResult {
        t_obs,
        p_value: exceed as f64 / b as f64,
        per_gamma: eval.per_gamma,
        boot_draws: eval.boot_max,
        b,
        seed,
        ill_conditioned: eval.ill_conditioned,
        warnings: eval.warnings,
    })
}
