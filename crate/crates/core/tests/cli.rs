use std::process::Command;

fn chaincs(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_chaincs")).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn chainset_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout, _) = chaincs(&["chainset", "--config", "preset:scalar-stable", "--out", out]);
    assert_eq!(code, 0, "{stdout}");
    for f in ["report.json", "timings.json", "nodes.csv", "edges.csv", "plotdata/set_axis_0.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert_eq!(report["outcome"], "pass");
    assert_eq!(report["chain"]["verification"]["set_count"], 1);
    let nodes = read(&dir.path().join("nodes.csv"));
    assert!(nodes.starts_with("set,node,c0"));
    assert!(nodes.lines().count() > 1);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let (code, _, _) = chaincs(&[
            "chainset",
            "--config",
            "preset:drift-axis",
            "--seed",
            "7",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for f in ["report.json", "nodes.csv", "edges.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn overrides_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = chaincs(&[
        "chainset",
        "--config",
        "preset:scalar-unstable",
        "--eps",
        "0.2",
        "--delta",
        "0.1",
        "--tau",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let r: serde_json::Value = serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert_eq!(r["chain"]["params"]["eps"], 0.2);
    assert_eq!(r["chain"]["params"]["tau"], 2.0);
    assert_eq!(r["chain"]["delta"], 0.1);
}

#[test]
fn simulate_writes_trajectory_and_cross_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) =
        chaincs(&["simulate", "--config", "preset:heisenberg-central", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let traj = read(&dir.path().join("trajectory.csv"));
    assert!(traj.starts_with("t,x0,x1,x2"));
    let r: serde_json::Value = serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert!(r["simulation"]["cross_check_deviation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    // [e1,e2] = e3 and [e1,e3] = e1 break the Jacobi identity
    std::fs::write(
        &bad,
        r#"schema_version = 1
name = "bad"
[algebra]
dim = 3
brackets = [[1, 2, 3, 1.0], [1, 3, 1, 1.0], [2, 3, 2, 1.0]]
[derivation]
matrix = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]
[control]
z = [[1.0, 0.0, 0.0]]
lo = [-1.0]
hi = [1.0]
[chain]
eps = 0.1
tau = 1.0
delta = 0.1
"#,
    )
    .unwrap();
    let (code, _, err) = chaincs(&["decompose", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = chaincs(&["decompose", "--config", "preset:no-such-preset"]);
    assert_eq!(code, 2);
    let (code, _, _) = chaincs(&["decompose", "--config", "/nonexistent/file.toml"]);
    assert_eq!(code, 2);
}

#[test]
fn non_hyperbolic_without_window_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, text) = chaincs::config::PRESETS.iter().find(|(n, _)| *n == "heisenberg-mixed").unwrap();
    let no_window: String = text.lines().filter(|l| !l.starts_with("window_")).map(|l| format!("{l}\n")).collect();
    let path = dir.path().join("mixed.toml");
    std::fs::write(&path, no_window).unwrap();
    let (code, _, err) = chaincs(&["chainset", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("hyperbolic"), "{err}");
}

#[test]
fn non_compact_center_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = chaincs(&["chainset", "--config", "preset:drift-axis", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(err.contains("not compact"), "{err}");
    let r: serde_json::Value = serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert_eq!(r["outcome"], "not_applicable");
}
