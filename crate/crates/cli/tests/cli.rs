use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_branch-target"));
    c.env_remove("BRANCH_TARGET_THREADS");
    c
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn desk() -> String {
    scenarios().join("desk.json").display().to_string()
}

fn write_variant(dir: &Path, name: &str, from: &str, to: &str) -> String {
    let text = fs::read_to_string(scenarios().join("desk.json")).unwrap();
    assert!(text.contains(from));
    let path = dir.join(name);
    fs::write(&path, text.replace(from, to)).unwrap();
    path.display().to_string()
}

#[test]
fn simulate_writes_three_csvs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = run(&["simulate", &desk(), "--paths", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut csvs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs, ["events.csv", "growth.csv", "population.csv"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seeds"][0], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["scenario_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn negative_gamma_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_variant(tmp.path(), "bad.json", "\"gamma\": 1.0", "\"gamma\": -1.0");
    let o = run(&["simulate", &bad, "--paths", "10", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn missing_scenario_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "solve", "verify", "value-mc", "dpp-check"] {
        let o = run(&[cmd, "/definitely/not/here.json", "--out", tmp.path().to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{cmd}");
    }
}

#[test]
fn too_few_time_steps_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["solve", &desk(), "--nt", "3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("suggested dt"), "{err}");
    assert!(err.contains("--nt 13"), "{err}");
}

#[test]
fn tampered_strike_table_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_variant(
        tmp.path(),
        "tampered.json",
        "\"strike_bound\": 1.0",
        "\"strike_bound\": 1.0, \"strikes\": {\"0.1\": 4.0}",
    );
    let o = run(&["verify", &bad, "--out", tmp.path().join("v").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL [B]"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("v/report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn desk_verifies_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["verify", &desk(), "--level", "fast", "--out", tmp.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 10, "{stdout}");
}

#[test]
fn reruns_and_thread_counts_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = (0..3).map(|k| tmp.path().join(format!("r{k}"))).collect();
    for (k, d) in dirs.iter().enumerate() {
        let mut c = bin();
        c.args(["simulate", &desk(), "--paths", "200", "--control", "0.5", "--out", d.to_str().unwrap()]);
        if k == 2 {
            c.env("BRANCH_TARGET_THREADS", "1");
        }
        assert!(c.output().unwrap().status.success());
    }
    for name in ["population.csv", "events.csv", "growth.csv"] {
        let a = fs::read(dirs[0].join(name)).unwrap();
        assert_eq!(a, fs::read(dirs[1].join(name)).unwrap(), "{name}");
        assert_eq!(a, fs::read(dirs[2].join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bad_thread_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .env("BRANCH_TARGET_THREADS", "zero")
        .args(["simulate", &desk(), "--paths", "5", "--out", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

fn root_rows(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("surface.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("root,"))
        .map(str::to_string)
        .collect()
}

#[test]
fn depth_zero_and_one_agree_for_label_free_payoff() {
    let tmp = tempfile::tempdir().unwrap();
    let p = scenarios().join("portfolio.json").display().to_string();
    let mut rows = Vec::new();
    for depth in ["0", "1"] {
        let out = tmp.path().join(depth);
        let o = run(&[
            "solve",
            &p,
            "--depth",
            depth,
            "--nx",
            "101",
            "--x-lo",
            "-4",
            "--x-hi",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        rows.push(root_rows(&out));
    }
    assert!(!rows[0].is_empty());
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn value_and_dpp_commands_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = run(&["value-mc", &desk(), "--paths", "300", "--tol", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("value.json")).unwrap()).unwrap();
    let (lo, hi) = (v["closed_form_bounds"][0].as_f64().unwrap(), v["closed_form_bounds"][1].as_f64().unwrap());
    let y = v["y_hat"].as_f64().unwrap();
    assert!(y >= lo - 0.1 && y <= hi + 0.1, "{y}");
    assert!(fs::read_to_string(out.join("rates.csv")).unwrap().starts_with("y,control_id,success_rate,se\n"));

    let out = tmp.path().join("d");
    let o = run(&["dpp-check", &desk(), "--paths", "300", "--theta", "first-branch", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["dpp-check", &desk(), "--theta", "later", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
