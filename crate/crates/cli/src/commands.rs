use std::path::Path;
use std::sync::Arc;

use cplane::rng::child_seed;
use cplane::simulation::{run_estimation_study, run_power_study, EstimationStudy, PowerStudy};
use cplane::{
    fit_with_weight, load_dataset, pointwise_bands, run_subgroup_test, weighted_fit, write_dataset, BandConfig,
    ChangePlaneFit, CovarianceModel, DGPSpec, DgpMode, Error, FunctionalDataset, PointwiseBands, Result, RunConfig,
};
use serde::Serialize;

use crate::artifacts::{num, sha256_f64, write_json, Run, Table, MANIFEST};
use crate::{DataArgs, FitArgs, ModeChoice, SimulateArgs, StudyArgs, TestArgs, WeightChoice};

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = Some(s);
        cfg.fit.seed = s;
        cfg.test.seed = s;
    }
    Ok(cfg)
}

fn xtilde_columns(args: &DataArgs) -> Result<Option<Vec<usize>>> {
    match &args.xtilde {
        None => Ok(None),
        Some(cols) => cols
            .iter()
            .map(|&c| {
                c.checked_sub(1)
                    .ok_or_else(|| Error::Config("--xtilde columns are 1-based".into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
    }
}

/// Config, dataset and input digests shared by `fit` and `test`.
fn open(command: &str, args: &DataArgs, threads: usize) -> Result<(RunConfig, FunctionalDataset, Run)> {
    let cfg = resolve_config(args.config.as_deref(), args.seed)?;
    let xtilde = xtilde_columns(args)?;
    let ds = load_dataset(&args.responses, &args.covariates, xtilde.as_deref())?;
    let mut run = Run::start(command, &args.out, cfg.seed(), threads)?;
    run.input("responses", &args.responses)?;
    run.input("covariates", &args.covariates)?;
    if let Some(p) = &args.config {
        run.input("config", p)?;
    }
    run.lap("load");
    Ok((cfg, ds, run))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct CovarianceSummary {
    ridge_added: f64,
    e_hat_diag: Vec<f64>,
    lambda_hat_diag: Vec<f64>,
}

#[derive(Serialize)]
struct FitRecord {
    weight: &'static str,
    gamma: Vec<f64>,
    converged: bool,
    n_iter: usize,
    flat_objective: bool,
    loss_trace: Vec<f64>,
    group_sizes: [usize; 2],
    /// Representer coefficients, one row per component.
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    /// Values on the grid, one row per component.
    beta: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    covariance: Option<CovarianceSummary>,
}

impl FitRecord {
    fn new(ds: &FunctionalDataset, fit: &ChangePlaneFit, weight: &'static str) -> Self {
        let vals = fit.theta.on_grid();
        let p = ds.p();
        let members = fit.membership(ds).iter().filter(|&&b| b).count();
        Self {
            weight,
            gamma: fit.gamma.clone(),
            converged: fit.converged,
            n_iter: fit.n_iter,
            flat_objective: fit.flat_objective,
            loss_trace: fit.loss_trace.clone(),
            group_sizes: [ds.n() - members, members],
            b: rows(&fit.theta.b),
            c: rows(&fit.theta.c),
            beta: rows(&vals.rows(0, p).into_owned()),
            delta: rows(&vals.rows(p, ds.d()).into_owned()),
            covariance: fit.covariance.as_deref().map(|cov| CovarianceSummary {
                ridge_added: cov.ridge_added,
                e_hat_diag: cov.e_hat_diag.iter().copied().collect(),
                lambda_hat_diag: cov.lambda_hat.diagonal().iter().copied().collect(),
            }),
        }
    }
}

#[derive(Serialize)]
struct BandSummary {
    level: f64,
    n_boot: usize,
    n_failed: usize,
    seed: u64,
}

#[derive(Serialize)]
struct FitOutput {
    manifest: &'static str,
    n: usize,
    m: usize,
    p: usize,
    d: usize,
    q: usize,
    grid: Vec<f64>,
    xtilde: Vec<usize>,
    lambda: f64,
    h: f64,
    unweighted: FitRecord,
    weighted: Option<FitRecord>,
    bands: Option<BandSummary>,
}

#[derive(Serialize)]
struct FitManifestConfig<'a> {
    run: &'a RunConfig,
    xtilde: Option<Vec<usize>>,
    weighted: bool,
    weight: Option<WeightChoice>,
    bands: Option<&'a BandConfig>,
}

fn component_names(ds: &FunctionalDataset) -> Vec<String> {
    (1..=ds.p())
        .map(|k| format!("beta{k}"))
        .chain((1..=ds.d()).map(|k| format!("delta{k}")))
        .collect()
}

fn write_curves(
    path: &Path,
    ds: &FunctionalDataset,
    fit: &ChangePlaneFit,
    bands: Option<&PointwiseBands>,
) -> Result<()> {
    let vals = fit.theta.on_grid();
    let scale = ds.grid_scale();
    let mut table = Table::new(&["component", "s", "estimate", "lower", "upper"]);
    for (k, name) in component_names(ds).into_iter().enumerate() {
        for (j, &s) in ds.grid().iter().enumerate() {
            let (lo, hi) = match bands {
                Some(b) => (num(b.lower[(k, j)]), num(b.upper[(k, j)])),
                None => (String::new(), String::new()),
            };
            table.row([name.clone(), num(scale.to_original(s)), num(vals[(k, j)]), lo, hi]);
        }
    }
    table.write(path)
}

fn write_membership(path: &Path, ds: &FunctionalDataset, fit: &ChangePlaneFit) -> Result<()> {
    let index = ds.plane_index(&fit.gamma);
    let labels = fit.membership(ds);
    let mut table = Table::new(&["subject_id", "label", "index"]);
    for (i, id) in ds.subject_ids().iter().enumerate() {
        table.row([id.clone(), u8::from(labels[i]).to_string(), num(index[i])]);
    }
    table.write(path)
}

pub fn fit(args: &FitArgs, threads: usize) -> Result<()> {
    let (cfg, ds, mut run) = open("fit", &args.data, threads)?;
    let band_cfg = args.bands.then(|| BandConfig {
        level: args.band_level,
        n_boot: args.band_boot,
        seed: child_seed(cfg.seed(), "bands", 0),
        eval_points: None,
    });

    let ls = cplane::fit(&ds, &cfg.fit)?;
    run.lap("fit");
    let wls = if args.weighted {
        let refit = match args.weight {
            WeightChoice::Estimated => weighted_fit(&ds, &cfg.fit, &ls)?,
            WeightChoice::Identity => {
                // same start and penalty as the unweighted fit, so the two coincide
                let mut c = cfg.fit.clone();
                c.lambda = ls.lambda;
                c.lambda_grid = None;
                fit_with_weight(&ds, &c, Some(Arc::new(CovarianceModel::identity(ds.m()))))?
            }
        };
        run.lap("weighted-fit");
        Some(refit)
    } else {
        None
    };
    let reported = wls.as_ref().unwrap_or(&ls);
    let bands = match &band_cfg {
        Some(b) => {
            let out = pointwise_bands(&ds, &cfg.fit, reported, b)?;
            run.lap("bands");
            Some(out)
        }
        None => None,
    };

    let weight_label = match args.weight {
        WeightChoice::Estimated => "estimated",
        WeightChoice::Identity => "identity",
    };
    let output = FitOutput {
        manifest: MANIFEST,
        n: ds.n(),
        m: ds.m(),
        p: ds.p(),
        d: ds.d(),
        q: ds.q(),
        grid: ds.grid().iter().map(|&s| ds.grid_scale().to_original(s)).collect(),
        xtilde: ds.xtilde_idx().iter().map(|k| k + 1).collect(),
        lambda: ls.lambda,
        h: ls.h,
        unweighted: FitRecord::new(&ds, &ls, "none"),
        weighted: wls.as_ref().map(|f| FitRecord::new(&ds, f, weight_label)),
        bands: bands.as_ref().map(|b| BandSummary {
            level: b.level,
            n_boot: b.n_boot,
            n_failed: b.n_failed,
            seed: band_cfg.as_ref().map_or(0, |c| c.seed),
        }),
    };
    write_json(&run.output("fit.json")?, &output)?;
    write_curves(&run.output("curves.csv")?, &ds, reported, bands.as_ref())?;
    write_membership(&run.output("membership.csv")?, &ds, reported)?;
    run.lap("write");
    run.finish(FitManifestConfig {
        run: &cfg,
        xtilde: args.data.xtilde.clone(),
        weighted: args.weighted,
        weight: args.weighted.then_some(args.weight),
        bands: band_cfg.as_ref(),
    })
}

#[derive(Serialize)]
struct CandidateRecord {
    gamma: Vec<f64>,
    statistic: f64,
}

#[derive(Serialize)]
struct TestOutput {
    manifest: &'static str,
    t_obs: f64,
    p_value: f64,
    reject_at_005: bool,
    b: usize,
    q: usize,
    seed: u64,
    null_lambda: f64,
    boot_draws_sha256: String,
    ill_conditioned: bool,
    warnings: Vec<String>,
    per_gamma: Vec<CandidateRecord>,
}

pub fn test(args: &TestArgs, threads: usize) -> Result<()> {
    let (mut cfg, ds, mut run) = open("test", &args.data, threads)?;
    if let Some(b) = args.b {
        cfg.test.b = b;
    }
    if let Some(q) = args.q {
        cfg.test.q = q;
    }
    cfg.test.validate()?;
    let (res, family) = run_subgroup_test(&ds, &cfg.test, cfg.fit.lambda)?;
    run.lap("test");
    let output = TestOutput {
        manifest: MANIFEST,
        t_obs: res.t_obs,
        p_value: res.p_value,
        reject_at_005: res.p_value <= cplane::simulation::ALPHA,
        b: res.b,
        q: family.len(),
        seed: res.seed,
        null_lambda: cfg.test.lambda.unwrap_or(cfg.fit.lambda),
        boot_draws_sha256: sha256_f64(&res.boot_draws),
        ill_conditioned: res.ill_conditioned,
        warnings: res.warnings.clone(),
        per_gamma: family
            .candidates
            .iter()
            .zip(&res.per_gamma)
            .map(|(g, &t)| CandidateRecord {
                gamma: g.clone(),
                statistic: t,
            })
            .collect(),
    };
    write_json(&run.output("test.json")?, &output)?;
    let mut draws = Table::new(&["draw", "statistic"]);
    for (k, v) in res.boot_draws.iter().enumerate() {
        draws.row([k.to_string(), num(*v)]);
    }
    draws.write(&run.output("bootstrap.csv")?)?;
    run.lap("write");
    #[derive(Serialize)]
    struct TestManifestConfig<'a> {
        run: &'a RunConfig,
        xtilde: Option<Vec<usize>>,
    }
    run.finish(TestManifestConfig {
        run: &cfg,
        xtilde: args.data.xtilde.clone(),
    })
}

#[derive(Serialize)]
struct Truth {
    manifest: &'static str,
    gamma: Vec<f64>,
    xtilde: Vec<usize>,
    group_sizes: [usize; 2],
    grid: Vec<f64>,
    beta: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

pub fn simulate(args: &SimulateArgs, threads: usize) -> Result<()> {
    let spec = DGPSpec {
        n: args.n,
        m: args.m,
        c: args.c,
        mode: match args.mode {
            ModeChoice::Estimation => DgpMode::Estimation,
            ModeChoice::Testing => DgpMode::Testing,
        },
        seed: args.seed,
        ..DGPSpec::default()
    };
    let mut run = Run::start("simulate", &args.out, args.seed, threads)?;
    let sim = cplane::generate(&spec)?;
    run.lap("generate");
    let ds = &sim.dataset;
    let members = sim.truth.labels.iter().filter(|&&b| b).count();
    write_dataset(ds, &run.output("responses.csv")?, &run.output("covariates.csv")?)?;
    write_json(
        &run.output("truth.json")?,
        &Truth {
            manifest: MANIFEST,
            gamma: sim.truth.gamma.clone(),
            xtilde: ds.xtilde_idx().iter().map(|k| k + 1).collect(),
            group_sizes: [ds.n() - members, members],
            grid: ds.grid().to_vec(),
            beta: rows(&sim.truth.beta),
            delta: rows(&sim.truth.delta),
        },
    )?;
    run.lap("write");
    run.finish(&spec)
}

fn write_tables(run: &mut Run, study: &EstimationStudy) -> Result<()> {
    let q = study.cells.first().map_or(0, |c| c.gamma_bias.len());
    let mut header = vec!["n".to_string(), "m".into(), "method".into(), "reps".into(), "failures".into()];
    for k in 1..=q {
        header.push(format!("gamma{k}_bias"));
        header.push(format!("gamma{k}_sd"));
    }
    header.push("gamma_error_median".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t1 = Table::new(&refs);
    let mut t2 = Table::new(&["n", "m", "method", "accuracy_mean", "accuracy_sd"]);
    let mut t3 = Table::new(&["n", "m", "method", "component", "rase_mean", "rase_sd", "rase_median"]);
    let mut tc = Table::new(&["n", "m", "method", "lambda_sup_median", "lambda_sup_below_025"]);
    let names = ["beta1", "beta2", "beta3", "delta1", "delta2"];
    for cell in &study.cells {
        let key = [cell.n.to_string(), cell.m.to_string(), cell.method.label().to_string()];
        let mut r1 = key.to_vec();
        r1.push(cell.reps.to_string());
        r1.push(cell.failures.to_string());
        for k in 0..q {
            r1.push(num(cell.gamma_bias[k]));
            r1.push(num(cell.gamma_sd[k]));
        }
        r1.push(num(cell.gamma_error_median));
        t1.row(r1);
        t2.row(key.iter().cloned().chain([num(cell.accuracy_mean), num(cell.accuracy_sd)]));
        for (k, name) in names.iter().enumerate() {
            t3.row(key.iter().cloned().chain([
                name.to_string(),
                num(cell.rase_mean[k]),
                num(cell.rase_sd[k]),
                num(cell.rase_median[k]),
            ]));
        }
        tc.row(key.iter().cloned().chain([num(cell.lambda_sup_median), num(cell.lambda_sup_below_025)]));
    }
    t1.write(&run.output("tables/gamma.csv")?)?;
    t2.write(&run.output("tables/accuracy.csv")?)?;
    t3.write(&run.output("tables/rase.csv")?)?;
    tc.write(&run.output("tables/covariance.csv")?)?;

    let mut header = vec!["n", "m", "rep", "method"];
    let gamma_cols: Vec<String> = (1..=q).map(|k| format!("gamma{k}")).collect();
    header.extend(gamma_cols.iter().map(String::as_str));
    header.extend(["gamma_error", "accuracy"]);
    let rase_cols: Vec<String> = names.iter().map(|n| format!("rase_{n}")).collect();
    header.extend(rase_cols.iter().map(String::as_str));
    header.extend(["lambda_sup_error", "converged", "data_digest"]);
    let mut rec = Table::new(&header);
    for r in &study.records {
        let mut row = vec![r.n.to_string(), r.m.to_string(), r.rep.to_string(), r.method.label().to_string()];
        row.extend(r.gamma.iter().map(|&v| num(v)));
        row.push(num(r.gamma_error));
        row.push(num(r.accuracy));
        row.extend(r.rase.iter().map(|&v| num(v)));
        row.push(num(r.lambda_sup_error));
        row.push(r.converged.to_string());
        row.push(format!("{:016x}", r.data_digest));
        rec.row(row);
    }
    rec.write(&run.output("records.csv")?)
}

fn write_power(run: &mut Run, study: &PowerStudy) -> Result<()> {
    let mut power = Table::new(&["c", "power", "mc_se"]);
    let mut pvals = Table::new(&["c", "rep", "p_value"]);
    for pt in &study.points {
        power.row([num(pt.c), num(pt.power), num(pt.mc_se)]);
        for (k, p) in pt.p_values.iter().enumerate() {
            pvals.row([num(pt.c), k.to_string(), num(*p)]);
        }
    }
    power.write(&run.output("power.csv")?)?;
    pvals.write(&run.output("power_pvalues.csv")?)
}

pub fn study(args: &StudyArgs, threads: usize) -> Result<()> {
    let mut cfg = resolve_config(args.config.as_deref(), args.seed)?;
    if let Some(r) = args.reps {
        cfg.study.reps = r;
        cfg.study.power_reps = r;
    }
    if !args.cells.is_empty() {
        cfg.study.cells = args.cells.clone();
    }
    let seed = cfg.seed();
    let mut run = Run::start("study", &args.out, seed, threads)?;
    if let Some(p) = &args.config {
        run.input("config", p)?;
    }
    let est = run_estimation_study(&cfg.study.cells, cfg.study.reps, &cfg.fit, seed)?;
    run.lap("estimation-study");
    write_tables(&mut run, &est)?;
    let mut failures = est.failures.clone();
    if !args.no_power {
        let s = &cfg.study;
        let power = run_power_study(
            &s.c_grid,
            s.power_n,
            s.power_m,
            s.power_b,
            s.power_q,
            s.power_reps,
            &cfg.test,
            cfg.fit.lambda,
            seed,
        )?;
        run.lap("power-study");
        write_power(&mut run, &power)?;
        failures.extend(power.failures);
    }
    let mut table = Table::new(&["failure"]);
    for f in failures {
        table.row([f]);
    }
    table.write(&run.output("failures.csv")?)?;
    run.lap("write");
    #[derive(Serialize)]
    struct StudyManifestConfig<'a> {
        run: &'a RunConfig,
        power: bool,
    }
    run.finish(StudyManifestConfig {
        run: &cfg,
        power: !args.no_power,
    })
}
