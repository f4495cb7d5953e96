use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ctrlode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlode"))
        .args(args)
        .env("CTRLODE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small VdP run that finishes in about a second.
const QUICK: &[&str] = &[
    "-O",
    "multistart.n_starts=2",
    "-O",
    "multistart.hidden=[8]",
    "-O",
    r#"multistart.precondition={"windows":[0.5,1.0],"optimizer":{"kind":"adamw","step_size":0.02,"max_iters":20}}"#,
    "-O",
    r#"multistart.stages=[{"kind":"adamw","step_size":0.01,"max_iters":20},{"kind":"lbfgs","max_iters":15}]"#,
    "-O",
    "barrier.schedule.max_rounds=2",
    "-O",
    "barrier.optimizer.max_iters=15",
    "-O",
    "output.trajectory_points=101",
];

fn solve(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--out", out.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    ctrlode(&args)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"stage\": \"full\",\n  \"integrator\": { \"rtoll\": 1e-6 }\n}\n").unwrap();
    let o = ctrlode(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("rtoll") && err.contains("line 3"), "{err}");

    let o = ctrlode(&["solve", "-O", "multistart.n_startz=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_startz"), "{}", stderr(&o));
}

#[test]
fn same_seed_gives_identical_csvs_and_summary_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        // Two short rounds need not reach feasibility; both outcomes are runs.
        let o = solve(d, &["--seed", "3"]);
        assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    }
    for f in ["convergence.csv", "trajectory.csv", "controls.csv", "policy.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between runs");
    }
    let head = std::fs::read_to_string(a.join("convergence.csv")).unwrap();
    assert!(head.starts_with("# ctrlode convergence v1\nphase,start,round,iter,cost,objective,penalty,grad_inf_norm"));
    let s = summary(&a);
    assert_eq!(s["seed"], 3);
    assert!(s["constraints"][0]["label"].as_str().unwrap().contains("x1"));

    // Re-running from the recorded configuration reproduces the cost.
    let c = dir.path().join("c");
    let o = ctrlode(&["solve", "--config", a.join("config.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let (x, y) = (s["final_cost"].as_f64().unwrap(), summary(&c)["final_cost"].as_f64().unwrap());
    assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");

    let other = dir.path().join("d");
    solve(&other, &["--seed", "4"]);
    assert_ne!(std::fs::read(a.join("convergence.csv")).unwrap(), std::fs::read(other.join("convergence.csv")).unwrap());
}

#[test]
fn infeasible_result_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // x1(0) = 0 already violates x1 >= 0.5.
    let o = solve(dir.path(), &["-O", "problem.x1_min=0.5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(summary(dir.path())["feasible"], false);
    assert!(dir.path().join("checkpoints/round_00.json").exists());
}

#[test]
fn precondition_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["precondition", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let o = ctrlode(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("tracking"));
    let ck = dir.path().join("checkpoints/precondition.json");
    let o = ctrlode(&["inspect", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("[2, 8, 1]") && text.contains("parameters    33"), "{text}");

    let o = ctrlode(&["inspect", dir.path().join("summary.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn portrait_of_constrained_policy_respects_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctrlode(&["solve", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = dir.path().join("policy.json");
    let o = ctrlode(&[
        "portrait",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--x1-range",
        "-1,1",
        "--x2-range",
        "-1,1.5",
        "--resolution",
        "11",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("portrait.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# ctrlode portrait v1"));
    assert_eq!(lines.next(), Some("series,x1,x2,dx1,dx2"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().filter(|r| r[0] == "grid").count(), 121);
    let traj: Vec<f64> = rows.iter().filter(|r| r[0] == "trajectory").map(|r| r[1].parse().unwrap()).collect();
    assert!(!traj.is_empty());
    assert!(traj.iter().all(|&x1| x1 >= -0.41), "{traj:?}");

    let o = ctrlode(&["portrait", "--resolution", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = ctrlode(&["portrait", "-O", "problem.name=bioreactor", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let o = ctrlode(&["gradcheck", "--directions", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));

    let o = ctrlode(&["gradcheck", "--directions", "5", "--corrupt-jacobian", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL"), "{text}");
    let fd: f64 = text.lines().find_map(|l| l.strip_prefix("fd_rel_err")).unwrap().trim().parse().unwrap();
    assert!(fd > 1e-2, "{fd}");

    let o = ctrlode(&["gradcheck", "--directions", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("direction"), "{}", stderr(&o));
}
