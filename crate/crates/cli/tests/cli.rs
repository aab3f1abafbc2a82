use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run(args: &[&str], file: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peakcert"))
        .arg(args[0])
        .arg(file)
        .args(&args[1..])
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn bounds(r: &Value) -> Vec<f64> {
    r["degrees"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["bound"].as_f64().unwrap())
        .collect()
}

#[test]
fn bound_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["bound", "--ladder", "1..3"],
        &problem("time_varying.json"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "bound");
    assert!(r["problem_digest"].as_str().unwrap().starts_with("sha256:"));
    for (b, want) in bounds(&r).iter().zip([1.5473, 0.4981, 0.4931]) {
        assert!((b - want).abs() < 1e-3, "{b} vs {want}");
    }
    for f in ["levelset.csv", "boundaries.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("levelset.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x1,x2,v"));
    assert_eq!(csv.lines().count(), 1 + 81 * 81);
}

#[test]
fn frozen_point_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bound", "--degree", "1"], &problem("frozen_point.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!((bounds(&report(dir.path()))[0] - 0.3).abs() < 1e-6);
}

#[test]
fn maximin_ladder_and_beta() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["maximin", "--ladder", "1..3"],
        &problem("time_varying_maximin.json"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    for (b, want) in bounds(&r).iter().zip([1.0765, 0.3905, 0.3891]) {
        assert!((b - want).abs() < 1e-3, "{b} vs {want}");
    }
    let beta: Vec<f64> = r["degrees"][2]["beta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b.as_f64().unwrap())
        .collect();
    assert!((beta[0] - 0.647).abs() < 0.05 && (beta[1] - 0.353).abs() < 0.05);
}

fn strip_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&["recover"], &problem("time_varying.json"), dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(strip_timings(report(a.path())), strip_timings(report(b.path())));
    for f in ["triples.json", "traj_0.csv", "boundaries.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn recover_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["recover"], &problem("time_varying.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let triples: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("triples.json")).unwrap()).unwrap();
    let t = &triples[0];
    assert!((t["x0"][0].as_f64().unwrap() + 1.674).abs() < 0.02);
    assert!((t["x0"][1].as_f64().unwrap() + 0.383).abs() < 0.02);
    assert!((t["tp"].as_f64().unwrap() - 2.19).abs() < 0.05);
    let csv = std::fs::read_to_string(dir.path().join("traj_0.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,x2,objective"));
    assert!(!dir.path().join("traj_1.csv").exists());
}

#[test]
fn unrecoverable_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["recover", "--d0", "1", "--dmax", "1", "--epsilon", "1e-9"],
        &problem("time_varying.json"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert!(r.get("triples").is_none());
    assert!(r["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w == "no certified triples"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("triples.json")).unwrap().trim(),
        "[]"
    );
}

#[test]
fn margin_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["margin", "--degree", "5"], &problem("flow_safe.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert!((r["margins"][0]["margin"].as_f64().unwrap() + 0.1417).abs() < 0.02);
    assert_eq!(r["verdict"]["verdict"], "safe");

    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["margin", "--degree", "5", "--with-unsafe-check"],
        &problem("flow_unsafe.json"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "inconclusive verdicts exit 0");
    let r = report(dir.path());
    assert!((r["margins"][0]["margin"].as_f64().unwrap() - 0.1935).abs() < 0.02);
    assert_eq!(r["verdict"]["verdict"], "inconclusive");
    assert_eq!(r["feasibility"][0]["feasibility"], "feasible");
}

#[test]
fn far_unsafe_set_is_safe_at_low_degree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["margin", "--degree", "3"], &problem("flow_far.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(report(dir.path())["margins"][0]["margin"].as_f64().unwrap() < 0.0);
}

#[test]
fn export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["export", "--degree", "3"], &problem("time_varying.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("problem.dat-s")).unwrap();
    let conic = peakcert::conic::sdpa::import(&text).unwrap();
    let sol = peakcert::conic::solve(&conic, &peakcert::conic::SolverOptions::default());
    assert!(sol.is_usable());
    assert!((sol.primal_objective - 0.4931).abs() < 1e-3, "{}", sol.primal_objective);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn malformed_file_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"variables": ["x"], "dynamics": ["x +"], "horizon": 1, "objectives": ["x"]}"#,
    )
    .unwrap();
    for cmd in ["export", "bound", "recover", "margin"] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd], &bad, &out);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(!out.exists(), "{cmd} wrote output");
    }
    let o = run(&["bound"], &dir.path().join("missing.json"), &dir.path().join("m"));
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&bad, "{ not json").unwrap();
    let o = run(&["bound"], &bad, &dir.path().join("s"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["bound"],
        &["bound", "--ladder", "3..1"],
        &["bound", "--degree", "0"],
        &["bound", "--ladder", "one"],
    ];
    let files = [
        "time_varying_maximin.json",
        "time_varying.json",
        "time_varying.json",
        "time_varying.json",
    ];
    for (args, f) in cases.iter().zip(files) {
        let o = run(args, &problem(f), &dir.path().join("x"));
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let o = run(&["unsafe"], &problem("time_varying.json"), &dir.path().join("y"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["bound", "--degree", "2", "--max-iter", "2"],
        &problem("time_varying.json"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let r = report(dir.path());
    assert_eq!(r["degrees"][0]["status"], "max_iterations");
    assert!(r["degrees"][0].get("bound").is_none());
}
