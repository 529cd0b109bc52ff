//! Output files and the run manifest.
//!
//! Everything numeric is written without wall-clock data so that repeated
//! runs produce byte-identical files; timings live only in `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cplane::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn sha256_f64(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Diagnostics(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Plain comma-separated table. Cells never contain separators or quotes
/// apart from subject ids, which are quoted when needed.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut t = Self { text: String::new() };
        t.row(header.iter().map(|h| h.to_string()));
        t
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().map(|c| quote(&c)).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(io_err(path))
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Shortest representation that parses back to the same double.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: C,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub timings: Vec<(String, f64)>,
}

/// Collects inputs, outputs and stage timings for one command.
pub struct Run {
    out: PathBuf,
    command: String,
    seed: u64,
    threads: usize,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Run {
    pub fn start(command: &str, out: &Path, seed: u64, threads: usize) -> Result<Self> {
        create_dir(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            command: command.to_string(),
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Path of an output file, registered in the manifest.
    pub fn output(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        self.outputs.push(name.to_string());
        Ok(path)
    }

    /// Records the time since the previous stage ended.
    pub fn lap(&mut self, stage: &str) {
        self.timings.push((stage.to_string(), self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    pub fn finish<C: Serialize>(self, config: C) -> Result<()> {
        let path = self.out.join(MANIFEST);
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            threads: self.threads,
            timings: self.timings,
        };
        write_json(&path, &manifest)
    }
}
