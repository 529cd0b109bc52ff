use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use cplane::simulation::{generate, DGPSpec};
use cplane::{load_dataset, FitConfig};
use serde_json::Value;

fn cplane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cplane")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = cplane(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not one JSON record ({e}): {text}"))
}

fn simulate(dir: &Path, n: usize, m: usize, seed: u64) -> (PathBuf, PathBuf) {
    let out = dir.join(format!("sim-{n}-{m}-{seed}"));
    ok(&["simulate", "--n", &n.to_string(), "--m", &m.to_string(), "--seed", &seed.to_string(), "-o", s(&out)]);
    (out.join("responses.csv"), out.join("covariates.csv"))
}

fn gammas(v: &Value) -> Vec<f64> {
    v["gamma"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap()).collect()
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = simulate(dir.path(), 400, 30, 21);

    // the written files reload to exactly the generated dataset
    let sim = generate(&DGPSpec { n: 400, m: 30, seed: 21, ..DGPSpec::default() }).unwrap();
    let ds = load_dataset(&r, &c, Some(&[0, 1])).unwrap();
    assert_eq!(ds.y(), sim.dataset.y());
    assert_eq!(ds.x(), sim.dataset.x());
    assert_eq!(ds.z1(), sim.dataset.z1());
    assert_eq!(ds.z2(), sim.dataset.z2());
    assert_eq!(ds.grid(), sim.dataset.grid());

    let out = dir.path().join("fit");
    ok(&["fit", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "-o", s(&out)]);
    let fit = json(&out.join("fit.json"));
    let gamma = gammas(&fit["unweighted"]);
    let direct = cplane::fit(&sim.dataset, &FitConfig::default()).unwrap();
    assert_eq!(gamma, direct.gamma);
    for (g, t) in gamma.iter().zip([-1.0, 1.0]) {
        assert!((g - t).abs() < 0.25, "gamma {gamma:?}");
    }
    assert_eq!(fit["xtilde"], serde_json::json!([1, 2]));

    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("component,s,estimate,lower,upper"));
    assert_eq!(curves.lines().count(), 1 + 5 * 30);
    let members = fs::read_to_string(out.join("membership.csv")).unwrap();
    assert_eq!(members.lines().count(), 401);
    let labels: Vec<bool> = members.lines().skip(1).map(|l| l.split(',').nth(1) == Some("1")).collect();
    assert_eq!(labels, direct.membership(&sim.dataset));
}

#[test]
fn identity_weight_reproduces_the_unweighted_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = simulate(dir.path(), 150, 15, 5);
    let plain = dir.path().join("plain");
    let ident = dir.path().join("ident");
    let base = ["fit", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "--bands", "--band-boot", "120"];
    ok(&[&base[..], &["-o", s(&plain)]].concat());
    ok(&[&base[..], &["--weighted", "--weight", "identity", "-o", s(&ident)]].concat());
    for name in ["curves.csv", "membership.csv"] {
        assert_eq!(fs::read(plain.join(name)).unwrap(), fs::read(ident.join(name)).unwrap(), "{name}");
    }
    let (a, b) = (json(&plain.join("fit.json")), json(&ident.join("fit.json")));
    assert!(a["weighted"].is_null());
    for key in ["gamma", "b", "c", "beta", "delta", "loss_trace"] {
        assert_eq!(a["unweighted"][key], b["weighted"][key], "{key}");
    }
    assert_eq!(b["weighted"]["weight"], "identity");
}

#[test]
fn estimated_weight_changes_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = simulate(dir.path(), 150, 15, 6);
    let out = dir.path().join("wls");
    ok(&["fit", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "--weighted", "-o", s(&out)]);
    let fit = json(&out.join("fit.json"));
    assert_eq!(fit["weighted"]["weight"], "estimated");
    assert_ne!(fit["weighted"]["beta"], fit["unweighted"]["beta"]);
    assert_eq!(fit["weighted"]["covariance"]["e_hat_diag"].as_array().unwrap().len(), 15);
}

#[test]
fn missing_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, c) = simulate(dir.path(), 20, 5, 1);
    let missing = dir.path().join("absent.csv");
    let out = cplane(&["fit", "--responses", s(&missing), "--covariates", s(&c), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "input");
    assert_eq!(rec["error"]["path"], s(&missing));
}

#[test]
fn configuration_errors_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = simulate(dir.path(), 20, 5, 1);
    let o = dir.path().join("o");
    let out = cplane(&["test", "--responses", s(&r), "--covariates", s(&c), "--b", "99", "-o", s(&o)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_record(&out)["error"]["kind"], "config");

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[fit]\nlamda = 0.1\n").unwrap();
    let out = cplane(&["fit", "--responses", s(&r), "--covariates", s(&c), "--config", s(&cfg), "-o", s(&o)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(error_record(&out)["error"]["message"].as_str().unwrap().contains("bad.toml"));

    let out = cplane(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(4));
    error_record(&out);
}

#[test]
fn malformed_data_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let (r, _) = simulate(dir.path(), 20, 5, 1);
    let bad = dir.path().join("cov.csv");
    fs::write(&bad, "subject_id,x1,z1\n0,1,zero\n").unwrap();
    let out = cplane(&["fit", "--responses", s(&r), "--covariates", s(&bad), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["path"], s(&bad));
}

#[test]
fn curves_are_reported_on_the_original_grid_scale() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = (dir.path().join("r.csv"), dir.path().join("c.csv"));
    let sim = generate(&DGPSpec { n: 60, m: 8, seed: 2, ..DGPSpec::default() }).unwrap();
    let ds = &sim.dataset;
    let days: Vec<f64> = (1..=8).map(f64::from).collect();
    let mut text = String::from("subject_id,s,y\n");
    for i in 0..60 {
        for (j, d) in days.iter().enumerate() {
            text.push_str(&format!("s{i},{d},{:?}\n", ds.y()[(i, j)]));
        }
    }
    fs::write(&r, text).unwrap();
    let mut text = String::from("subject_id,x1,x2,x3,z1,z2_1\n");
    for i in 0..60 {
        let x = ds.x().row(i);
        text.push_str(&format!("s{i},{:?},{:?},{:?},{:?},{:?}\n", x[0], x[1], x[2], ds.z1()[i], ds.z2()[(i, 1)]));
    }
    fs::write(&c, text).unwrap();
    let out = dir.path().join("fit");
    ok(&["fit", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "-o", s(&out)]);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    let s_vals: Vec<f64> = curves.lines().skip(1).take(8).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(s_vals, days);
    assert_eq!(json(&out.join("fit.json"))["grid"], serde_json::json!(days));
    assert!(curves.lines().nth(1).unwrap().starts_with("beta1,1.0,"));
    assert!(curves.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn strong_effects_give_small_p_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut small = 0;
    for seed in 0..5 {
        let (r, c) = simulate(dir.path(), 400, 20, 40 + seed);
        let out = dir.path().join(format!("test-{seed}"));
        ok(&["test", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "--b", "100", "--q", "100", "-o", s(&out)]);
        let t = json(&out.join("test.json"));
        let p = t["p_value"].as_f64().unwrap();
        if p <= 1.0 / 100.0 {
            small += 1;
        }
        assert_eq!(t["per_gamma"].as_array().unwrap().len(), t["q"].as_u64().unwrap() as usize);
        let draws = fs::read_to_string(out.join("bootstrap.csv")).unwrap();
        assert_eq!(draws.lines().count(), 101);
    }
    assert!(small >= 4, "{small} of 5 p-values at or below 1/B");
}

/// Every output except the manifest, plus the manifest without timings.
fn payload(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            let bytes = if name == "manifest.json" {
                let mut m = json(&p);
                m.as_object_mut().unwrap().remove("timings");
                m.as_object_mut().unwrap().remove("threads");
                serde_json::to_vec(&m).unwrap()
            } else {
                fs::read(&p).unwrap()
            };
            files.push((name, bytes));
        }
    }
    files.sort();
    files
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = simulate(dir.path(), 120, 12, 8);
    let run = |threads: &str, tag: &str| -> Vec<Vec<(String, Vec<u8>)>> {
        let base = dir.path().join(tag);
        let (f, t, sm, st) = (base.join("fit"), base.join("test"), base.join("sim"), base.join("study"));
        ok(&["--threads", threads, "fit", "--responses", s(&r), "--covariates", s(&c), "--xtilde", "1,2", "--weighted", "--bands", "--band-boot", "100", "-o", s(&f)]);
        ok(&["--threads", threads, "test", "--responses", s(&r), "--covariates", s(&c), "--b", "100", "--q", "50", "--seed", "3", "-o", s(&t)]);
        ok(&["--threads", threads, "simulate", "--n", "30", "--m", "6", "--seed", "4", "-o", s(&sm)]);
        ok(&["--threads", threads, "study", "--reps", "3", "--cell", "40x6", "--no-power", "-o", s(&st)]);
        [f, t, sm, st].iter().map(|d| payload(d)).collect()
    };
    let one = run("1", "a");
    assert_eq!(one, run("1", "b"));
    assert_eq!(one, run("3", "c"));
}

#[test]
fn study_smoke_run_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let t0 = Instant::now();
    ok(&["study", "--reps", "1", "--cell", "100x10", "-o", s(&out)]);
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "{elapsed} s");
    let power = fs::read_to_string(out.join("power.csv")).unwrap();
    assert_eq!(power.lines().next(), Some("c,power,mc_se"));
    assert_eq!(power.lines().count(), 8);
    let t3 = fs::read_to_string(out.join("tables/rase.csv")).unwrap();
    assert_eq!(t3.lines().count(), 1 + 2 * 5);
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 3);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "study");
    assert_eq!(manifest["config"]["run"]["study"]["cells"], serde_json::json!([[100, 10]]));
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "tables/gamma.csv"));
}
