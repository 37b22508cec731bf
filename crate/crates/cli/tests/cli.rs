//! End-to-end CLI tests over the file-based interfaces.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cbayes() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbayes"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const DATA: &str = "x1,y\n0.5,0.4\n-1.2,-1.0\n0.3,0.5\n1.8,1.7\n-0.7,-0.9\n0.1,0.2\n-0.4,-0.1\n0.9,1.1\n";
const TEST: &str = "x1,y\n0.0,0.1\n1.0,0.8\n";
const DRAWS: &str = "theta.1,theta0,tau,b\n0.9,0.0,0.3,1.0\n1.0,0.05,0.25,0.9\n0.95,-0.05,0.35,1.1\n";

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn cbayes")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn conformal_happy_path_emits_versioned_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", TEST);
    let draws = write(dir.path(), "p.csv", DRAWS);
    let out = dir.path().join("sets.json");
    let res = run(cbayes()
        .args(["conformal", "--alpha", "0.2", "--grid", "auto"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(&out));
    assert_success(&res);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(env["format_version"], 1);
    assert_eq!(env["config"]["alpha"], 0.2);
    let results = env["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        assert_eq!(r["method"], "cb");
        assert!(r["set"]["intervals"].is_array());
        assert!(r["pi"].as_array().unwrap().len() >= 2);
        assert!(r["covered_grid"].is_boolean());
        assert!(r["covered_exact"].is_boolean());
    }
}

#[test]
fn conformal_near_zero_alpha_returns_the_whole_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", "x1\n0.0\n");
    let draws = write(dir.path(), "p.csv", DRAWS);
    let out = dir.path().join("sets.json");
    let res = run(cbayes()
        .args(["conformal", "--alpha", "1e-9", "--grid", "-3,3,21"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(&out));
    assert_success(&res);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let iv = env["results"][0]["set"]["intervals"].as_array().unwrap();
    assert_eq!(iv.len(), 1);
    assert_eq!(iv[0][0], -3.0);
    assert_eq!(iv[0][1], 3.0);
}

#[test]
fn group_conformal_min_feasible_policy() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "g.csv",
        "x1,y,group\n0.5,0.7,1\n-0.2,-0.1,1\n0.8,1.0,1\n0.1,0.3,1\n-0.5,-0.6,2\n0.4,0.5,2\n1.1,1.3,2\n-0.9,-1.2,2\n0.2,0.1,2\n",
    );
    let test = write(dir.path(), "t.csv", "x1,group\n0.0,1\n0.5,2\n");
    let out = dir.path().join("g.json");
    let res = run(cbayes()
        .args([
            "group-conformal",
            "--alpha-policy",
            "min-feasible:1.1",
            "--sample-inline",
            "--t",
            "200",
            "--tune",
            "200",
            "--seed",
            "5",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--out")
        .arg(&out));
    assert_success(&res);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let results = env["results"].as_array().unwrap();
    // n_1 = 4: α_1 = 1.1/5; n_2 = 5: α_2 = 1.1/6
    assert!((results[0]["alpha_j"].as_f64().unwrap() - 0.22).abs() < 1e-12);
    assert!((results[1]["alpha_j"].as_f64().unwrap() - 1.1 / 6.0).abs() < 1e-12);
    assert_eq!(results[0]["feasible"], true);
    assert_eq!(results[0]["group"], 1);
}

#[test]
fn sample_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    for out in [&out1, &out2] {
        let res = run(cbayes()
            .args(["sample", "--t", "100", "--tune", "100", "--seed", "9"])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(out));
        assert_success(&res);
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    // the emitted draws feed straight back into conformal
    let test = write(dir.path(), "t.csv", "x1\n0.2\n");
    let res = run(cbayes()
        .args(["conformal", "--alpha", "0.2", "--grid", "auto"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&out1)
        .arg("--out")
        .arg(dir.path().join("s.json")));
    assert_success(&res);
}

#[test]
fn input_files_are_never_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", TEST);
    let draws = write(dir.path(), "p.csv", DRAWS);
    let res = run(cbayes()
        .args(["conformal"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(dir.path().join("o.json")));
    assert_success(&res);
    assert_eq!(fs::read_to_string(&data).unwrap(), DATA);
    assert_eq!(fs::read_to_string(&test).unwrap(), TEST);
    assert_eq!(fs::read_to_string(&draws).unwrap(), DRAWS);
}

#[test]
fn bad_draws_header_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", TEST);
    let draws = write(dir.path(), "p.csv", "theta.1,theta0\n0.9,0.0\n");
    let res = run(cbayes()
        .args(["conformal"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws));
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("draws"), "{stderr}");
    assert!(stderr.contains("hint"), "{stderr}");
}

#[test]
fn degenerate_weights_exit_3_and_floor_flag_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", "x1\n0.0\n");
    // one draw with a tiny τ: absurdly remote grid values have −∞ density
    let draws = write(dir.path(), "p.csv", "theta.1,theta0,tau,b\n0.9,0.0,1e-3,1.0\n");
    let res = run(cbayes()
        .args(["conformal", "--grid", "-1e200,1e200,5"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws));
    assert_eq!(res.status.code(), Some(3));
    let res = run(cbayes()
        .args(["conformal", "--grid", "-1e200,1e200,5", "--floor-degenerate"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(dir.path().join("o.json")));
    assert_success(&res);
}

#[test]
fn missing_draws_source_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", TEST);
    let res = run(cbayes()
        .args(["conformal"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test));
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn dump_rank_writes_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", "x1\n0.0\n0.5\n");
    let draws = write(dir.path(), "p.csv", DRAWS);
    let prefix = dir.path().join("rank");
    let res = run(cbayes()
        .args(["conformal", "--grid", "-2,2,11"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--dump-rank")
        .arg(&prefix)
        .arg("--out")
        .arg(dir.path().join("o.json")));
    assert_success(&res);
    for i in 0..2 {
        let body = fs::read_to_string(dir.path().join(format!("rank.{i}.csv"))).unwrap();
        assert!(body.starts_with("# config:"));
        assert!(body.contains("y,pi,ess"));
        // 11 grid rows + comment + header
        assert_eq!(body.lines().count(), 13);
    }
}

#[test]
fn bench_requires_seed_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(cbayes().args(["bench", "--scenario", "paper-hier-1", "--repeats", "2"]));
    assert_eq!(res.status.code(), Some(2)); // clap usage error: --seed missing
    let json_out = dir.path().join("r.json");
    let csv_out = dir.path().join("r.csv");
    let res = run(cbayes()
        .args([
            "bench",
            "--scenario",
            "paper-hier-1",
            "--repeats",
            "2",
            "--t",
            "150",
            "--tune",
            "150",
            "--seed",
            "3",
            "--n-grid",
            "30",
        ])
        .arg("--out")
        .arg(&json_out)
        .arg("--csv")
        .arg(&csv_out));
    assert_success(&res);
    let table = String::from_utf8_lossy(&res.stdout);
    assert!(table.contains("coverage"));
    assert!(table.contains("overall"));
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(env["format_version"], 1);
    assert_eq!(env["config"]["seed"], 3);
    assert!(env["report"]["rows"].as_array().unwrap().len() >= 2);
    let csv = fs::read_to_string(&csv_out).unwrap();
    assert!(csv.starts_with("repeat,method,group,coverage,length"));
}

#[test]
fn diagnose_uniform_draws_report_flat_ess_equal_to_t() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", "x1\n0.3\n");
    // identical rows: the weight column is constant at every grid value
    let mut body = String::from("theta.1,theta0,tau,b\n");
    for _ in 0..7 {
        body.push_str("0.9,0.0,0.5,1.0\n");
    }
    let draws = write(dir.path(), "p.csv", &body);
    let prefix = dir.path().join("flat");
    let res = run(cbayes()
        .args(["diagnose", "--grid", "-2,2,9"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(&prefix));
    assert_success(&res);
    let out = fs::read_to_string(dir.path().join("flat.0.csv")).unwrap();
    let ess: Vec<f64> = out
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ess.len(), 9);
    for e in ess {
        assert!((e - 7.0).abs() < 1e-9, "ESS {e} != T = 7");
    }
}

#[test]
fn diagnose_single_grid_point_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATA);
    let test = write(dir.path(), "t.csv", "x1\n0.0\n");
    let draws = write(dir.path(), "p.csv", DRAWS);
    let prefix = dir.path().join("diag");
    let res = run(cbayes()
        .args(["diagnose", "--grid", "0.25"])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--draws")
        .arg(&draws)
        .arg("--out")
        .arg(&prefix));
    assert_success(&res);
    let body = fs::read_to_string(dir.path().join("diag.0.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines.len(), 3); // config comment + header + one row
    assert!(lines[1].starts_with("y,ess,ess_scaled,pi"));
}

#[test]
fn logistic_family_uses_the_label_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "d.csv",
        "x1,y\n1.5,1\n2.0,1\n1.2,1\n-1.0,0\n-1.8,0\n-0.7,0\n0.3,1\n-0.2,0\n",
    );
    let test = write(dir.path(), "t.csv", "x1\n1.0\n-1.0\n");
    let out = dir.path().join("c.json");
    let res = run(cbayes()
        .args([
            "conformal",
            "--family",
            "logistic",
            "--sample-inline",
            "--t",
            "200",
            "--tune",
            "200",
            "--seed",
            "2",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--test")
        .arg(&test)
        .arg("--out")
        .arg(&out));
    assert_success(&res);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let r = &env["results"][0];
    assert!(r["set"]["labels"].is_array());
    assert_eq!(r["grid"]["labels"], serde_json::json!([0, 1]));
    assert_eq!(r["pi"].as_array().unwrap().len(), 2);
}
