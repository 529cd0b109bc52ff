//! `cplane` command-line interface.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cplane::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "cplane", version, about = "Change-plane subgroup learning for functional responses")]
struct Cli {
    /// Worker threads; 0 uses every available core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit coefficient functions and the grouping hyperplane.
    Fit(FitArgs),
    /// Score test for the existence of a subgroup.
    Test(TestArgs),
    /// Monte-Carlo estimation and power studies.
    Study(StudyArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Long-format responses: subject_id, s, y.
    #[arg(long)]
    pub responses: PathBuf,
    /// Wide covariates: subject_id, x1..xp, z1, z2_1..
    #[arg(long)]
    pub covariates: PathBuf,
    /// 1-based `x` columns carrying the subgroup effect (default: all).
    #[arg(long, value_delimiter = ',')]
    pub xtilde: Option<Vec<usize>>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightChoice {
    /// `Φ̂` estimated from the unweighted residuals.
    Estimated,
    /// Identity weight; reproduces the unweighted fit.
    Identity,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Refit with the estimated error covariance.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, value_enum, default_value_t = WeightChoice::Estimated, requires = "weighted")]
    pub weight: WeightChoice,
    /// Pointwise bootstrap bands for the reported fit.
    #[arg(long)]
    pub bands: bool,
    #[arg(long, default_value_t = 0.95)]
    pub band_level: f64,
    #[arg(long, default_value_t = 500)]
    pub band_boot: usize,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Bootstrap draws (overrides the config).
    #[arg(long)]
    pub b: Option<usize>,
    /// Candidate grouping parameters (overrides the config).
    #[arg(long)]
    pub q: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Estimation,
    Testing,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    /// Local-alternative size; used in testing mode only.
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = ModeChoice::Estimation)]
    pub mode: ModeChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications for both studies (overrides the config).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Estimation cell as `NxM`; repeatable, replaces the configured cells.
    #[arg(long = "cell", value_parser = parse_cell)]
    pub cells: Vec<(usize, usize)>,
    /// Skip the power study.
    #[arg(long)]
    pub no_power: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn parse_cell(text: &str) -> Result<(usize, usize), String> {
    let (n, m) = text.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got {text:?}"))?;
    let n = n.trim().parse().map_err(|_| format!("bad sample size in {text:?}"))?;
    let m = m.trim().parse().map_err(|_| format!("bad grid size in {text:?}"))?;
    Ok((n, m))
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Config => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Input => "input",
        ErrorKind::Numerical => "numerical",
        ErrorKind::Config => "config",
    }
}

fn report(kind: ErrorKind, message: String, path: Option<String>) -> ExitCode {
    let record = serde_json::json!({
        "error": {
            "kind": kind_name(kind),
            "exit_code": exit_code(kind),
            "message": message,
            "path": path,
        }
    });
    eprintln!("{record}");
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(ErrorKind::Config, e.to_string().trim().to_string(), None),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return report(ErrorKind::Config, format!("thread pool: {e}"), None);
    }
    let outcome = match &cli.command {
        Command::Simulate(args) => commands::simulate(args, cli.threads),
        Command::Fit(args) => commands::fit(args, cli.threads),
        Command::Test(args) => commands::test(args, cli.threads),
        Command::Study(args) => commands::study(args, cli.threads),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let path = match &e {
                Error::Io { path, .. } | Error::Csv { path, .. } => Some(path.clone()),
                _ => None,
            };
            report(e.kind(), e.to_string(), path)
        }
    }
}
