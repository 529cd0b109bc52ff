//! Dataset files and run configuration.
//!
//! Responses are stored long (`subject_id,s,y`), covariates wide
//! (`subject_id,x1..xp,z1,z2_1..z2_k`); the intercept of `Z2` is implicit.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{FitConfig, FunctionalDataset, GridScale};
use crate::error::{Error, Result};
use crate::score_test::TestConfig;

/// Tolerance for matching grid points across subjects.
pub const GRID_MATCH_TOL: f64 = 1e-12;

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| csv_err(path, format!("line {line}: cannot parse {field} value {raw:?}")))?;
    if !v.is_finite() {
        return Err(csv_err(path, format!("line {line}: non-finite {field} value")));
    }
    Ok(v)
}

/// Covariate table as read from disk.
#[derive(Debug, Clone)]
pub struct Covariates {
    pub ids: Vec<String>,
    pub x: DMatrix<f64>,
    pub z1: DVector<f64>,
    /// Without the intercept column.
    pub z2_extra: DMatrix<f64>,
}

pub fn read_covariates(path: &Path) -> Result<Covariates> {
    let mut rdr = open_csv(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.first() != Some(&"subject_id") {
        return Err(csv_err(path, "first column must be subject_id"));
    }
    let mut p = 0;
    while names.get(1 + p) == Some(&format!("x{}", p + 1).as_str()) {
        p += 1;
    }
    if p == 0 {
        return Err(csv_err(path, "expected covariate columns x1..xp after subject_id"));
    }
    if names.get(1 + p) != Some(&"z1") {
        return Err(csv_err(path, format!("expected column z1 after x{p}")));
    }
    let k = names.len() - p - 2;
    for j in 0..k {
        let want = format!("z2_{}", j + 1);
        if names[p + 2 + j] != want {
            return Err(csv_err(path, format!("expected column {want}, found {}", names[p + 2 + j])));
        }
    }

    let mut ids = Vec::new();
    let mut xs = Vec::new();
    let mut z1 = Vec::new();
    let mut zs = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| csv_err(path, format!("line {line}: {e}")))?;
        if rec.len() != names.len() {
            return Err(csv_err(path, format!("line {line}: expected {} fields", names.len())));
        }
        ids.push(rec[0].to_string());
        for j in 0..p {
            xs.push(parse_f64(path, line, names[1 + j], &rec[1 + j])?);
        }
        z1.push(parse_f64(path, line, "z1", &rec[1 + p])?);
        for j in 0..k {
            zs.push(parse_f64(path, line, names[p + 2 + j], &rec[p + 2 + j])?);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(csv_err(path, "no subjects"));
    }
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.clone(), i) {
            return Err(csv_err(path, format!("duplicate subject_id {id:?} (rows {prev} and {i})")));
        }
    }
    Ok(Covariates {
        ids,
        x: DMatrix::from_row_slice(n, p, &xs),
        z1: DVector::from_vec(z1),
        z2_extra: DMatrix::from_row_slice(n, k, &zs),
    })
}

/// Responses keyed by subject with a common, sorted grid.
#[derive(Debug, Clone)]
pub struct Responses {
    pub grid: Vec<f64>,
    pub by_subject: HashMap<String, Vec<f64>>,
}

pub fn read_responses(path: &Path) -> Result<Responses> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "s", "y"] {
        return Err(csv_err(path, "header must be subject_id,s,y"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| csv_err(path, format!("line {line}: {e}")))?;
        if rec.len() != 3 {
            return Err(csv_err(path, format!("line {line}: expected 3 fields")));
        }
        let id = rec[0].to_string();
        let s = parse_f64(path, line, "s", &rec[1])?;
        let y = parse_f64(path, line, "y", &rec[2])?;
        raw.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((s, y));
    }
    if order.is_empty() {
        return Err(csv_err(path, "no observations"));
    }
    for pts in raw.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let grid: Vec<f64> = raw[&order[0]].iter().map(|p| p.0).collect();
    if grid.windows(2).any(|w| (w[1] - w[0]).abs() <= GRID_MATCH_TOL) {
        return Err(csv_err(path, format!("subject {:?} has repeated grid points", order[0])));
    }
    let mut by_subject = HashMap::with_capacity(order.len());
    for id in &order {
        let pts = &raw[id];
        let ragged = pts.len() != grid.len()
            || pts.iter().zip(&grid).any(|(p, g)| (p.0 - g).abs() > GRID_MATCH_TOL);
        if ragged {
            return Err(csv_err(
                path,
                format!("subject {id:?} is not observed on the common grid (ragged grids are not supported)"),
            ));
        }
        by_subject.insert(id.clone(), pts.iter().map(|p| p.1).collect());
    }
    Ok(Responses { grid, by_subject })
}

/// Which `X` columns carry the subgroup effect (0-based); `None` selects all.
pub fn load_dataset(responses: &Path, covariates: &Path, xtilde: Option<&[usize]>) -> Result<FunctionalDataset> {
    let cov = read_covariates(covariates)?;
    let resp = read_responses(responses)?;
    let n = cov.ids.len();
    let m = resp.grid.len();
    let mut y = DMatrix::zeros(n, m);
    for (i, id) in cov.ids.iter().enumerate() {
        let row = resp.by_subject.get(id).ok_or_else(|| {
            csv_err(responses, format!("no responses for subject {id:?} listed in covariates"))
        })?;
        for (j, v) in row.iter().enumerate() {
            y[(i, j)] = *v;
        }
    }
    if resp.by_subject.len() != n {
        let extra = resp.by_subject.keys().find(|k| !cov.ids.contains(k)).cloned().unwrap_or_default();
        return Err(csv_err(responses, format!("subject {extra:?} has no covariate row")));
    }

    let lo = resp.grid[0];
    let hi = resp.grid[m - 1];
    let scale = if lo >= 0.0 && hi <= 1.0 {
        GridScale::IDENTITY
    } else {
        GridScale {
            offset: lo,
            scale: hi - lo,
        }
    };
    let grid = resp.grid.iter().map(|&s| scale.to_unit(s)).collect();

    let p = cov.x.ncols();
    let xt: Vec<usize> = match xtilde {
        Some(idx) => idx.to_vec(),
        None => (0..p).collect(),
    };
    let mut z2 = DMatrix::from_element(n, cov.z2_extra.ncols() + 1, 1.0);
    z2.columns_mut(1, cov.z2_extra.ncols()).copy_from(&cov.z2_extra);
    FunctionalDataset::with_metadata(y, cov.x, xt, cov.z1, z2, grid, cov.ids, scale)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| csv_err(path, e.to_string())
}

/// Write both files. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_dataset(dataset: &FunctionalDataset, responses: &Path, covariates: &Path) -> Result<()> {
    let scale = dataset.grid_scale();
    let mut w = csv::Writer::from_path(responses).map_err(csv_write_err(responses))?;
    w.write_record(["subject_id", "s", "y"]).map_err(csv_write_err(responses))?;
    for (i, id) in dataset.subject_ids().iter().enumerate() {
        for (j, &s) in dataset.grid().iter().enumerate() {
            w.write_record([id.clone(), scale.to_original(s).to_string(), dataset.y()[(i, j)].to_string()])
                .map_err(csv_write_err(responses))?;
        }
    }
    w.flush().map_err(io_err(responses))?;

    let p = dataset.p();
    let k = dataset.q() - 1;
    let mut w = csv::Writer::from_path(covariates).map_err(csv_write_err(covariates))?;
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.push("z1".into());
    header.extend((1..=k).map(|j| format!("z2_{j}")));
    w.write_record(&header).map_err(csv_write_err(covariates))?;
    for (i, id) in dataset.subject_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..p).map(|j| dataset.x()[(i, j)].to_string()));
        rec.push(dataset.z1()[i].to_string());
        rec.extend((1..=k).map(|j| dataset.z2()[(i, j)].to_string()));
        w.write_record(&rec).map_err(csv_write_err(covariates))?;
    }
    w.flush().map_err(io_err(covariates))?;
    Ok(())
}

/// Grids and budgets of the Monte-Carlo studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub cells: Vec<(usize, usize)>,
    pub reps: usize,
    pub c_grid: Vec<f64>,
    pub power_n: usize,
    pub power_m: usize,
    pub power_b: usize,
    pub power_q: usize,
    pub power_reps: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            cells: vec![(100, 10), (100, 30), (200, 10), (200, 30), (400, 10), (400, 30)],
            reps: 200,
            c_grid: vec![0.0, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3],
            power_n: 200,
            power_m: 30,
            power_b: 500,
            power_q: 200,
            power_reps: 200,
        }
    }
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of every section when present.
    pub seed: Option<u64>,
    pub fit: FitConfig,
    pub test: TestConfig,
    pub study: StudyConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.fit.seed = seed;
            cfg.test.seed = seed;
        }
        cfg.fit.validate()?;
        cfg.test.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Top-level seed, falling back to the fit seed.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.fit.seed)
    }
}
