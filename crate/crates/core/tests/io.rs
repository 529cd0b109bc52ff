use std::fs;
use std::path::Path;

use cplane::io::{read_covariates, read_responses};
use cplane::simulation::{generate, DGPSpec};
use cplane::{load_dataset, write_dataset, Error, ErrorKind, FunctionalDataset, RunConfig};
use nalgebra::{DMatrix, DVector};

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn dataset_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = (dir.path().join("responses.csv"), dir.path().join("covariates.csv"));
    let sim = generate(&DGPSpec {
        n: 25,
        m: 9,
        seed: 3,
        ..DGPSpec::default()
    })
    .unwrap();
    let ds = &sim.dataset;
    write_dataset(ds, &r, &c).unwrap();
    let back = load_dataset(&r, &c, Some(&[0, 1])).unwrap();
    assert_eq!(back.y(), ds.y());
    assert_eq!(back.x(), ds.x());
    assert_eq!(back.z1(), ds.z1());
    assert_eq!(back.z2(), ds.z2());
    assert_eq!(back.grid(), ds.grid());
    assert_eq!(back.xtilde_idx(), ds.xtilde_idx());
    assert_eq!(back.subject_ids(), ds.subject_ids());
}

#[test]
fn extreme_doubles_survive_the_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = (dir.path().join("r.csv"), dir.path().join("c.csv"));
    let vals = [0.1 + 0.2, 1e-300, -2.2250738585072014e-308, 1.7976931348623157e308, std::f64::consts::PI];
    let n = vals.len();
    let y = DMatrix::from_fn(n, 2, |i, j| vals[(i + j) % n]);
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { vals[(i + 2) % n] });
    let z1 = DVector::from_fn(n, |i, _| vals[(i + 3) % n]);
    let z2 = DMatrix::from_element(n, 1, 1.0);
    let ds = FunctionalDataset::new(y, x, vec![1], z1, z2, vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
    write_dataset(&ds, &r, &c).unwrap();
    let back = load_dataset(&r, &c, Some(&[1])).unwrap();
    assert_eq!(back.y(), ds.y());
    assert_eq!(back.x(), ds.x());
    assert_eq!(back.z1(), ds.z1());
    assert_eq!(back.grid(), ds.grid());
}

#[test]
fn grid_outside_unit_interval_is_rescaled_and_restored() {
    let dir = tempfile::tempdir().unwrap();
    let (r, c) = (dir.path().join("r.csv"), dir.path().join("c.csv"));
    let mut text = String::from("subject_id,s,y\n");
    for id in ["a", "b", "c", "d", "e"] {
        // rows deliberately out of order within a subject
        for day in [3, 1, 2, 5, 4] {
            text.push_str(&format!("{id},{day},{}\n", day as f64 * 0.5));
        }
    }
    write(&r, &text);
    write(&c, "subject_id,x1,z1\na,1,0.5\nb,2,-0.5\nc,0.5,1\nd,-1,2\ne,3,-2\n");
    let ds = load_dataset(&r, &c, None).unwrap();
    assert_eq!(ds.grid(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let scale = ds.grid_scale();
    assert_eq!(scale.to_original(0.25), 2.0);
    assert_eq!(ds.y().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 1.0, 1.5, 2.0, 2.5]);
    assert_eq!(ds.q(), 1);

    let (r2, c2) = (dir.path().join("r2.csv"), dir.path().join("c2.csv"));
    write_dataset(&ds, &r2, &c2).unwrap();
    let resp = read_responses(&r2).unwrap();
    assert_eq!(resp.grid, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn ragged_grids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.csv");
    write(&r, "subject_id,s,y\na,0.1,1\na,0.2,1\nb,0.1,1\nb,0.3,1\n");
    let err = read_responses(&r).unwrap_err();
    assert!(err.to_string().contains("ragged"), "{err}");
    assert_eq!(err.kind(), ErrorKind::Input);
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let other = dir.path().join("other.csv");
    write(&other, "subject_id,x1,z1\na,1,0\n");
    match load_dataset(&missing, &other, None) {
        Err(e @ Error::Io { .. }) => {
            assert!(e.to_string().contains("nope.csv"));
            assert_eq!(e.kind(), ErrorKind::Input);
        }
        other => panic!("expected an io error, got {other:?}"),
    }
}

#[test]
fn malformed_tables_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.csv");
    for bad in [
        "id,x1,z1\na,1,0\n",
        "subject_id,x1,z1\na,1,0\na,2,1\n",
        "subject_id,x1,z1\na,1,nan\n",
        "subject_id,x1,z1\na,1,zero\n",
        "subject_id,z1\na,0\n",
    ] {
        write(&c, bad);
        assert!(read_covariates(&c).is_err(), "{bad:?}");
    }
    let r = dir.path().join("r.csv");
    write(&r, "subject_id,s,y\na,0.1,1\na,0.2,2\nb,0.1,1\nb,0.2,2\nz,0.1,1\nz,0.2,2\n");
    write(&c, "subject_id,x1,z1\na,1,0\nb,2,1\n");
    assert!(load_dataset(&r, &c, None).is_err());
}

#[test]
fn run_config_parses_and_overrides_seeds() {
    let cfg = RunConfig::from_toml_str(
        r#"
        seed = 42
        [fit]
        lambda = 0.02
        [test]
        b = 200
        q = 50
        [study]
        reps = 3
        cells = [[40, 6]]
        "#,
    )
    .unwrap();
    assert_eq!(cfg.seed(), 42);
    assert_eq!(cfg.fit.seed, 42);
    assert_eq!(cfg.test.seed, 42);
    assert_eq!(cfg.fit.lambda, 0.02);
    assert_eq!(cfg.test.b, 200);
    assert_eq!(cfg.study.cells, vec![(40, 6)]);
    assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
}

#[test]
fn run_config_rejects_unknown_keys_and_bad_values() {
    for bad in ["[fit]\nlamda = 0.1\n", "[test]\nb = 10\n", "[fit]\nlambda = -1.0\n", "bogus = 1\n"] {
        let err = RunConfig::from_toml_str(bad).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Config, "{bad:?}: {err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    write(&p, "[test]\nb = 10\n");
    assert!(RunConfig::load(&p).unwrap_err().to_string().contains("run.toml"));
}
