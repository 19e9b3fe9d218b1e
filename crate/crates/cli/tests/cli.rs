use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clf-forge"));
    c.env_remove("CLF_FORGE_WORKERS");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn malformed_config_exits_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for body in ["{", r#"{"gird": {}}"#, r#"{"eval": {"t_max": -1}}"#, r#"{"levels": {"c": 0.01, "c1": 0.02}}"#] {
        let cfg = write_config(tmp.path(), "bad.json", body);
        for cmd in ["local-clf", "grid", "eval", "mpc", "char-trace"] {
            let o = run(cmd, &cfg, &out, &[]);
            assert_eq!(code(&o), 1, "{cmd} with {body}: {}", String::from_utf8_lossy(&o.stderr));
            assert!(!out.exists(), "{cmd} wrote output for a bad config");
        }
    }
    let o = run("grid", &tmp.path().join("missing.json"), &out, &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("grid").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn bad_worker_override_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"x0": [1, 1]}"#);
    let out = tmp.path().join("out");
    let o = bin()
        .env("CLF_FORGE_WORKERS", "many")
        .args(["char-trace", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    let o = run("char-trace", &cfg, &out, &["--workers", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn local_clf_example_2d_reports_level_sup() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{}");
    let out = tmp.path().join("out");
    let o = run("local-clf", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("local_clf.json")).unwrap()).unwrap();
    let c_sup = summary["c_sup"].as_f64().unwrap();
    assert!((0.0150..=0.0160).contains(&c_sup), "c_sup = {c_sup}");
    let (header, rows) = read_csv(&out.join("level_report.csv"));
    assert_eq!(header, ["level", "worst_decrease", "worst_slack", "admissible"]);
    assert_eq!(rows.len(), 200);
    assert!(!out.join("P.json").exists());
}

#[test]
fn local_clf_pvtol_riccati_admits_paper_level_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"kind": "pvtol"}, "local_clf": {"mode": "riccati", "q": 0.2, "r": 0.04},
            "levels": {"c": 0.017, "c1": 0.01}}"#,
    );
    let out = tmp.path().join("out");
    let o = run("local-clf", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("level_report.csv"));
    let (lc, ac) = (col(&header, "level"), col(&header, "admissible"));
    assert!(rows.iter().any(|r| r[lc].parse::<f64>().unwrap() >= 0.017 - 1e-12 && r[ac] == "1"));

    // the stored matrices drive a later job
    let alpha = serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(out.join("local_clf.json")).unwrap())
        .unwrap()["alpha"]
        .as_f64()
        .unwrap();
    let body = format!(
        r#"{{"system": {{"kind": "pvtol"}},
            "local_clf": {{"mode": "files", "p": {:?}, "s": {:?}, "alpha": {alpha}}},
            "levels": {{"c": 0.017, "c1": 0.01}},
            "x0": [0.05, 0, 0.02, 0, 0.01, 0],
            "mpc": {{"controller": "saturated_linear", "horizon": 0.5}}}}"#,
        out.join("P.json"),
        out.join("S.json")
    );
    let cfg2 = write_config(tmp.path(), "c2.json", &body);
    let o = run("mpc", &cfg2, &tmp.path().join("out2"), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn model_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    // zero feedback leaves the PVTOL linearization unstable
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"kind": "pvtol"}, "local_clf": {"mode": "lyapunov", "s": [[0,0,0,0,0,0],[0,0,0,0,0,0]], "alpha": 1}}"#,
    );
    let out = tmp.path().join("out");
    let o = run("local-clf", &cfg, &out, &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    let cfg = write_config(
        tmp.path(),
        "c2.json",
        r#"{"local_clf": {"mode": "files", "p": "/nonexistent/P.json", "s": "/nonexistent/S.json", "alpha": 1},
            "grid": {"counts": [2, 2]}}"#,
    );
    let o = run("grid", &cfg, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

const SMALL_GRID: &str = r#"{"grid": {"counts": [3, 2]}, "seed": 7}"#;

#[test]
fn grid_rows_match_nodes_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_GRID);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run("grid", &cfg, &a, &["--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin()
        .env("CLF_FORGE_WORKERS", "3")
        .args(["grid", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .args(["--workers", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let va = std::fs::read(a.join("values.csv")).unwrap();
    assert_eq!(va, std::fs::read(b.join("values.csv")).unwrap());
    let (header, rows) = read_csv(&a.join("values.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(header.len(), 2 + 2 + 1 + 5);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let (_, mask) = read_csv(&a.join("domain_mask.csv"));
    assert_eq!(mask.len(), 6);
    let plot = std::fs::read_to_string(a.join("plot.gp")).unwrap();
    assert!(plot.contains("splot 'values.csv'"));
}

#[test]
fn eval_writes_one_row_per_state_and_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"kind": "example2d", "a": 20}, "eval": {"t_max": 5},
            "states": [[0.05, 0.0], [0.8, -0.6]], "ball_deltas": [0.1, 0.4]}"#,
    );
    let out = tmp.path().join("out");
    let o = run("eval", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("eval.csv"));
    assert_eq!(rows.len(), 6);
    let (tc, vc, sc) = (col(&header, "target"), col(&header, "V"), col(&header, "status"));
    // (0.05, 0) lies in the sublevel target and inside both balls
    assert_eq!(rows[0][sc], "in_target");
    assert_eq!(rows[1][vc].parse::<f64>().unwrap(), 0.0);
    // larger targets give smaller values
    let v = |k: usize| rows[k][vc].parse::<f64>().unwrap();
    assert_eq!(rows[4][tc], format!("ball:{}", "1.0000000000000001e-1"));
    assert!(v(4) >= v(5));
}

#[test]
fn char_trace_forward_columns_and_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"x0": [1, 1]}"#);
    let out = tmp.path().join("out");
    let o = run("char-trace", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("trace.csv"));
    assert_eq!(header.len(), 1 + 2 + 2 + 1 + 2);
    assert_eq!(header.last().unwrap(), "h_drift");
    let dc = col(&header, "h_drift");
    let drift = rows.iter().map(|r| r[dc].parse::<f64>().unwrap().abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-4, "drift {drift}");
}

#[test]
fn char_trace_reverse_starts_on_launch_level() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"trace": {"reverse": true, "xi": [0.6, 0.8], "t_max": 2}}"#);
    let out = tmp.path().join("out");
    let o = run("char-trace", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("trace.csv"));
    let x1: f64 = rows[0][col(&header, "x1")].parse().unwrap();
    let x2: f64 = rows[0][col(&header, "x2")].parse().unwrap();
    let v = x1.powi(4) / 4.0 + x2 * x2 / 2.0;
    assert!((v - 0.01).abs() <= 1e-10, "V_loc = {v}");
    assert!(x1 > 0.0 && x2 > 0.0);
}

#[test]
fn mpc_without_noise_has_zero_spread_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"x0": [1.5, 1.5], "mpc": {"horizon": 0.5, "n_monte_carlo": 3}, "seed": 11}"#,
    );
    let a = tmp.path().join("a");
    let o = run("mpc", &cfg, &a, &["--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&a.join("mpc_mean_std.csv"));
    assert_eq!(header, ["t", "mean", "std"]);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
    let (sh, sw) = read_csv(&a.join("switches.csv"));
    assert_eq!(sh[0], "t");
    assert_eq!(sw.len(), 5);

    let noisy = write_config(
        tmp.path(),
        "n.json",
        r#"{"x0": [1.5, 1.5], "mpc": {"horizon": 0.3, "n_monte_carlo": 2, "noise": [0.05, 0.05]}, "seed": 11}"#,
    );
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(code(&run("mpc", &noisy, &b, &["--workers", "1"])), 0);
    assert_eq!(code(&run("mpc", &noisy, &c, &["--workers", "2"])), 0);
    for f in ["mpc_mean_std.csv", "switches.csv", "mpc_states.csv"] {
        assert_eq!(std::fs::read(b.join(f)).unwrap(), std::fs::read(c.join(f)).unwrap(), "{f}");
    }
    let (_, rows) = read_csv(&b.join("mpc_mean_std.csv"));
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert!(rows.last().unwrap()[2].parse::<f64>().unwrap() > 0.0);
}
