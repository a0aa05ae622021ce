use std::path::Path;
use std::process::{Command, Output};

use ncmac::io::{self, Metadata};
use ncmac::linalg::{self, C64};
use ncmac::model::{JointConstellation, UserConstellation};

fn ncmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncmac")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn orthogonal_pair(path: &Path) {
    let s = 2f64.sqrt();
    let syms = (0..2)
        .map(|i| {
            let mut x = linalg::zeros(2, 1);
            x[(i, 0)] = C64::new(s, 0.0);
            x
        })
        .collect();
    let c = JointConstellation::from_users(2, 1, vec![UserConstellation::from_symbols(syms).unwrap()]).unwrap();
    io::save_constellation(path, &c, &Metadata { n: Some(1), ..Default::default() }).unwrap();
}

#[test]
fn metrics_reports_b() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    orthogonal_pair(&f);
    let out = stdout(&ncmac(&["metrics", "--in", f.to_str().unwrap(), "--kinds", "b,J:0.5"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "snr_db,b,J:0.5");
    let b: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((b - 2.0 * 3f64.ln()).abs() < 1e-12);
}

#[test]
fn pep_closed_form_of_orthogonal_pair() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    orthogonal_pair(&f);
    let out = stdout(&ncmac(&["pep", "--in", f.to_str().unwrap(), "--pair", "0,1", "--N", "1", "--method", "closed"]));
    let v: f64 = out.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 0.25).abs() < 1e-12);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    orthogonal_pair(&f);
    let args = |o: &str| {
        ["simulate", "--in", f.to_str().unwrap(), "--N", "1", "--snr-db", "0:5:10", "--trials", "5000", "--seed", "3", "--out", o]
            .map(String::from)
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = Command::new(env!("CARGO_BIN_EXE_ncmac")).args(args(p.to_str().unwrap())).output().unwrap();
        assert!(o.status.success());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().starts_with("snr_db,trials,errors,ser,stderr\n"));
}

#[test]
fn construct_then_power() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("u.json");
    let o = ncmac(&["construct", "--type", "random-ustm", "--T", "3", "--K", "2", "--bits", "1", "--snr-db", "10", "--out", f.to_str().unwrap()]);
    stdout(&o);
    let out = stdout(&ncmac(&["power", "--in", f.to_str().unwrap(), "--mode", "cubic"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["theta_or_powers"].as_f64().unwrap() > 0.0);
    assert_eq!(v["metric"], "d");
}

#[test]
fn bad_input_is_an_error() {
    let o = ncmac(&["metrics", "--in", "x.json", "--bogus"]);
    assert!(!o.status.success());
    let o = ncmac(&["metrics", "--in", "/nonexistent/c.json"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}
