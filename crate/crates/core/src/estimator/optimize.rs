//! Search over the grouping parameter: Latin-hypercube screen seeding a
//! bounded Nelder–Mead, or an exhaustive regular grid for `q <= 2`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::profile::ProfileProblem;
use crate::data::FitConfig;
use crate::rng::substream;

#[derive(Debug, Clone)]
pub struct GammaSearch {
    pub gamma: Vec<f64>,
    pub loss: f64,
    pub evaluations: usize,
    /// Every screened candidate had constant smoothed weights.
    pub flat: bool,
}

/// Axis-aligned search box.
#[derive(Debug, Clone, Copy)]
pub struct GammaBox {
    pub lower: f64,
    pub upper: f64,
}

impl GammaBox {
    fn clamp(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(self.lower, self.upper);
        }
    }

    fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Latin-hypercube sample of `count` points in the `dim`-dimensional box.
pub fn latin_hypercube(count: usize, dim: usize, bx: GammaBox, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, "gamma-screen", dim as u64);
    let mut points = vec![vec![0.0; dim]; count];
    for k in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            points[i][k] = bx.lower + bx.width() * (s as f64 + u) / count as f64;
        }
    }
    points
}

/// Regular grid with `per_axis` points per coordinate (cell midpoints).
pub fn regular_grid(per_axis: usize, dim: usize, bx: GammaBox) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| bx.lower + bx.width() * (i as f64 + 0.5) / per_axis as f64)
        .collect();
    let mut out = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * per_axis);
        for prefix in &out {
            for &a in &axis {
                let mut v = prefix.clone();
                v.push(a);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Evaluates the profile loss on explicit candidates and returns the best.
pub fn search_candidates(problem: &ProfileProblem<'_>, candidates: &[Vec<f64>]) -> GammaSearch {
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut flat = true;
    for cand in candidates {
        if !problem.is_degenerate(cand) {
            flat = false;
        }
        let loss = problem.profile_loss(cand);
        if best.as_ref().map_or(true, |(_, l)| loss < *l) {
            best = Some((cand.clone(), loss));
        }
    }
    let (gamma, loss) = best.expect("at least one candidate");
    GammaSearch {
        gamma,
        loss,
        evaluations: candidates.len(),
        flat,
    }
}

/// Minimizes the profile loss starting from `init`.
///
/// With `screen` set, a Latin-hypercube screen over the box provides extra
/// starting points; otherwise only a local simplex search from `init` runs.
/// The returned loss is never above the loss at `init`.
pub fn optimize_gamma_on(
    problem: &ProfileProblem<'_>,
    config: &FitConfig,
    init: &[f64],
    screen: bool,
) -> GammaSearch {
    let q = init.len();
    let bx = GammaBox {
        lower: config.gamma_box.0,
        upper: config.gamma_box.1,
    };
    let init_loss = problem.profile_loss(init);
    let mut evaluations = 1;

    if let Some(per_axis) = config.grid_search.filter(|_| q <= 2) {
        let mut cands = regular_grid(per_axis.max(1), q, bx);
        cands.push(init.to_vec());
        let mut res = search_candidates(problem, &cands);
        res.evaluations += evaluations;
        if res.flat {
            return GammaSearch {
                gamma: init.to_vec(),
                loss: init_loss,
                evaluations: res.evaluations,
                flat: true,
            };
        }
        return res;
    }

    let mut starts: Vec<(Vec<f64>, f64)> = vec![(init.to_vec(), init_loss)];
    if screen && config.screen_points > 0 {
        let pts = latin_hypercube(config.screen_points, q, bx, config.seed);
        let mut flat = problem.is_degenerate(init);
        let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(pts.len());
        for pt in pts {
            if !problem.is_degenerate(&pt) {
                flat = false;
            }
            let l = problem.profile_loss(&pt);
            scored.push((pt, l));
        }
        evaluations += scored.len();
        if flat {
            return GammaSearch {
                gamma: init.to_vec(),
                loss: init_loss,
                evaluations,
                flat: true,
            };
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        starts.extend(scored.into_iter().take(config.restarts));
    }

    let step = 0.05 * bx.width();
    let mut best = (init.to_vec(), init_loss);
    for (start, _) in &starts {
        let (x, f, evals) = nelder_mead(|g| problem.profile_loss(g), start, step, bx);
        evaluations += evals;
        if f < best.1 {
            best = (x, f);
        }
    }
    GammaSearch {
        gamma: best.0,
        loss: best.1,
        evaluations,
        flat: false,
    }
}

/// Bounded Nelder–Mead; trial points are projected onto the box.
/// Returns `(argmin, min, evaluations)`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, bx: GammaBox) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    const XTOL: f64 = 1e-7;
    const FTOL: f64 = 1e-13;

    let dim = x0.len();
    let max_evals = 200 * (dim + 1);
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut start = x0.to_vec();
    bx.clamp(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for k in 0..dim {
        let mut v = start.clone();
        v[k] += step;
        if v[k] > bx.upper {
            v[k] = start[k] - step;
        }
        bx.clamp(&mut v);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fbest = simplex[0].1;
        let fworst = simplex[dim].1;
        let diam = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diam <= XTOL && (fworst - fbest).abs() <= FTOL * (fbest.abs() + 1e-300) {
            break;
        }
        if diam <= XTOL * 1e-3 {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for k in 0..dim {
                centroid[k] += v[k] / dim as f64;
            }
        }
        let worst = simplex[dim].0.clone();
        let along = |t: f64| -> Vec<f64> {
            let mut v: Vec<f64> = (0..dim)
                .map(|k| centroid[k] + t * (centroid[k] - worst[k]))
                .collect();
            bx.clamp(&mut v);
            v
        };

        let xr = along(ALPHA);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(GAMMA);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = along(RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = (0..dim)
                .map(|k| best[k] + SIGMA * (item.0[k] - best[k]))
                .collect();
            bx.clamp(&mut v);
            let fv = eval(&v, &mut evals);
            *item = (v, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, evals)
}
