use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn soid(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soid")).args(args).arg("--out").arg(out).output().expect("spawn soid")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("output exists")).expect("valid JSON")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn estimate_bundled_exact1_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("exact1_sample.csv");
    let o = soid(&["estimate", "--model", "exact1", "--data", data.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(dir.path().join("estimate.json"));
    assert_eq!(doc["regime"]["regime"], "second_order_exact");
    assert_eq!(doc["schema_version"], 1);
    assert!(doc["phi_hat"][0].as_f64().unwrap().abs() < 0.4);
}

#[test]
fn malformed_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[mc]\nrepetitions = 10\n");
    let o = soid(&["mc", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim().lines().count(), 1, "single-line reason: {err}");
    assert!(err.contains("repetitions"));
}

#[test]
fn empty_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = soid(&["estimate", "--model", "exact1", "--data", empty.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    let header_only = dir.path().join("header.csv");
    std::fs::write(&header_only, "x0_1,x1_1\n").unwrap();
    let o = soid(&["estimate", "--model", "exact1", "--data", header_only.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn vanishing_quartic_term_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nkind = \"synthetic\"\npreset = \"exact1\"\nc3 = 0.0\nc4 = 0.0\n");
    let o = soid(&["limit-sim", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no sign limit"));
}

#[test]
fn limit_sim_quantiles_and_atom() {
    let dir = tempfile::tempdir().unwrap();
    let o = soid(&["limit-sim", "--model", "exact1", "--draws", "100000", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = read_json(dir.path().join("limit_quantiles.json"));
    assert!((doc["atom_mass"].as_f64().unwrap() - 0.5).abs() < 0.005);
    let q = doc["quantiles"]["dphip"].as_object().unwrap();
    let keys: Vec<&str> = q.keys().map(String::as_str).collect();
    assert_eq!(keys, ["1", "2.5", "5", "10", "25", "50", "75", "90", "95", "97.5", "99"]);
    let csv = std::fs::read_to_string(dir.path().join("limit_draws.csv")).unwrap();
    assert!(csv.starts_with("# schema: limit-draws v1\n# seed: 3\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 100_001);
}

#[test]
fn over3_sign_probability_is_not_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let o = soid(&["limit-sim", "--model", "over3", "--draws", "100000", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = read_json(dir.path().join("limit_quantiles.json"));
    let p = doc["pr_b1"].as_f64().unwrap();
    let se = doc["pr_b1_se"].as_f64().unwrap();
    assert!((p - 0.5).abs() > 3.0 * se, "Pr(B1 = 1) = {p}");
}

#[test]
fn reruns_are_byte_identical_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 11\n[model]\nkind = \"synthetic\"\npreset = \"over3\"\n[mc]\nt_grid = [200, 800]\nreplications = 100\nlimit_draws = 5000\n");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["mc", "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = soid(&args, &out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", &[]);
    let b = run("b", &["--threads", "1"]);
    for f in ["mc_summary.json", "mc_records.csv", "mc_slopes.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = run("c", &["--seed", "12"]);
    assert_eq!(read_json(c.join("mc_summary.json"))["seed"], 12);

    // Re-running from the resolved config reproduces the results.
    let again = dir.path().join("again");
    let o = soid(&["mc", "--config", a.join("resolved_config.toml").to_str().unwrap()], &again);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("mc_records.csv")).unwrap(), std::fs::read(again.join("mc_records.csv")).unwrap());
    assert!(std::fs::read_to_string(a.join("soid.log")).unwrap().contains("unix_time="));
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = soid(&["simulate", "--model", "exact2", "--n", "500", "--seed", "4"], &dir.path().join("sim"));
    assert_eq!(o.status.code(), Some(0));
    let data = dir.path().join("sim/data.csv");
    let o = soid(&["estimate", "--model", "exact2", "--data", data.to_str().unwrap()], &dir.path().join("est"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(dir.path().join("est/estimate.json"));
    assert_eq!(doc["phi_hat"].as_array().unwrap().len(), 2);
}

#[test]
fn ar1_demo_sections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 2\n[ar1_demo]\nn_grid = [500, 1000, 2000]\nreplications = 100\nlimit_draws = 10000\nreference_n = 200000\n",
    );
    let o = soid(&["ar1-demo", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(dir.path().join("ar1_demo.json"));
    assert_eq!(doc["regimes"]["equal_variances"]["report"]["regime"], "second_order_exact");
    assert_eq!(doc["regimes"]["equal_variances"]["report"]["sign_degenerate"], true);
    assert_eq!(doc["regimes"]["unequal_variances"]["report"]["regime"], "first_order");
    assert!(doc["ks"]["continuous_part"]["pooled"].is_number());
    assert!(doc["ks"]["atom_test"]["z"].is_number());
    assert_eq!(doc["sign_frequency"]["by_n"].as_array().unwrap().len(), 3);
}

#[test]
fn bundle_file_round_trip_through_limit_sim() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("exact1_sample.csv");
    let o = soid(&["estimate", "--model", "exact1", "--data", data.to_str().unwrap()], &dir.path().join("est"));
    assert_eq!(o.status.code(), Some(0));
    let doc = read_json(dir.path().join("est/estimate.json"));
    let bundle = dir.path().join("bundle.json");
    std::fs::write(&bundle, serde_json::to_string(&doc["bundle"]).unwrap()).unwrap();
    let o = soid(&["limit-sim", "--bundle", bundle.to_str().unwrap(), "--draws", "2000"], &dir.path().join("ls"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let q = read_json(dir.path().join("ls/limit_quantiles.json"));
    assert_eq!(q["reference_source"], "bundle_file");
}

#[test]
fn missing_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(soid(&["limit-sim"], dir.path()).status.code(), Some(2));
    assert_eq!(soid(&["simulate", "--model", "exact9"], dir.path()).status.code(), Some(2));
}
