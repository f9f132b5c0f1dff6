use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_impulse");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

/// Data rows of a CSV artifact after the provenance line and the header.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

const CHEAP_SHIFT_SMALL: &str = r#"
[model]
type = "finite"
generator = [
    [-128.09, 128.0, 0.08, 0.01],
    [128.0, -128.09, 0.08, 0.01],
    [2.75, 2.75, -5.51, 0.01],
    [33.333333333333336, 33.333333333333336, 33.333333333333336, -100.0],
]
points = [0.0, 0.01, 0.02, 0.03]
reward = [0.0, 1.0, 2.0, 5.0]

[cost]
kind = "metric_capped"
c0 = 0.2
scale = 0.1
impulse_indices = [0, 1]

[dyadic]
m_min = 0
m_max = 4

[simulation]
horizon = 10.0
n_paths = 300
seed = 3
"#;

#[test]
fn simulate_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CHEAP_SHIFT_SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run(&["simulate"], &cfg, &a).status.success());
    assert!(run(&["simulate"], &cfg, &b).status.success());
    let first = fs::read(a.join("simulate.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("simulate.csv")).unwrap());
    assert!(run(&["simulate", "--seed", "4"], &cfg, &c).status.success());
    assert_ne!(first, fs::read(c.join("simulate.csv")).unwrap());
    let rows = csv_rows(&a.join("simulate.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "optimal");
    assert_eq!(rows[1][1], "no_impulse");
    assert_eq!(rows[1][8], "0");
}

#[test]
fn resolved_config_reproduces_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CHEAP_SHIFT_SMALL);
    let out = dir.path().join("o");
    assert!(run(&["solve"], &cfg, &out).status.success());
    let echo = out.join("resolved_config.toml");
    let first = fs::read_to_string(&echo).unwrap();
    let hash_line = first.lines().next().unwrap().to_string();
    let again = dir.path().join("again");
    assert!(run(&["solve"], &echo, &again).status.success());
    let second = fs::read_to_string(again.join("resolved_config.toml")).unwrap();
    assert_eq!(hash_line, second.lines().next().unwrap());
    let summary = fs::read_to_string(out.join("solve.txt")).unwrap();
    assert!(summary.starts_with(&hash_line));
    assert!(summary.contains("case impulsive"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = write_config(dir.path(), &CHEAP_SHIFT_SMALL.replace("c0 = 0.2", "c0 = -0.2"));
    let o = run(&["solve"], &bad, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cost.c0"));
    let bad = write_config(dir.path(), &CHEAP_SHIFT_SMALL.replace("seed = 3", "seed = 3\nwarmup = 1"));
    assert_eq!(run(&["solve"], &bad, &out).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["solve"], &missing, &out).status.code(), Some(2));
    // rows that are not stochastic are a model error
    let bad = write_config(
        dir.path(),
        "[model]\ntype = \"finite\"\nrows = [[0.5, 0.4], [0.5, 0.5]]\nreward = [0.0, 1.0]\n\
         [cost]\nkind = \"rational\"\nc0 = 0.3\nimpulse_indices = [0]\n",
    );
    assert_eq!(run(&["solve"], &bad, &out).status.code(), Some(2));
    let good = write_config(dir.path(), CHEAP_SHIFT_SMALL);
    assert_eq!(run(&["stopping"], &good, &out).status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // a chain that never moves has no minorization
    let frozen = write_config(
        dir.path(),
        "[model]\ntype = \"finite\"\nrows = [[1.0, 0.0], [0.0, 1.0]]\nreward = [0.0, 1.0]\n\
         [cost]\nkind = \"rational\"\nc0 = 0.3\nimpulse_indices = [0]\n",
    );
    let o = run(&["solve"], &frozen, &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let neg = write_config(
        dir.path(),
        &format!("{CHEAP_SHIFT_SMALL}\n[stopping]\nrunning = [0.5, 0.0, 1.0, 1.0]\nterminal = [0.0, 0.0, 0.0, 0.0]\n"),
    );
    assert_eq!(run(&["stopping"], &neg, &out).status.code(), Some(3));
}

#[test]
fn stopping_with_zero_terminal_cost_stops_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{CHEAP_SHIFT_SMALL}\n[stopping]\nrunning = [0.5, 0.25, 1.0, 2.0]\nterminal = [0.0, 0.0, 0.0, 0.0]\nhorizon = 1.0\n"
        ),
    );
    let out = dir.path().join("o");
    assert!(run(&["stopping"], &cfg, &out).status.success());
    for row in csv_rows(&out.join("stopping.csv")) {
        assert_eq!(row[1], "1");
        assert_eq!(row[2], "1");
    }
    let surface = csv_rows(&out.join("stopping_surface.csv"));
    assert_eq!(surface.len(), 17 * 4);
    assert!(surface.iter().all(|r| r[2] == "1"));
}

#[test]
fn single_state_finite_horizon_is_linear() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_state.toml");
    assert!(run(&["finite-horizon"], &cfg, out.path()).status.success());
    let rows = csv_rows(&out.path().join("finite_horizon.csv"));
    assert_eq!(rows.len(), 17);
    for r in rows {
        let t: f64 = r[2].parse().unwrap();
        let v: f64 = r[4].parse().unwrap();
        assert!((v - 1.5 * (2.0 - t)).abs() < 1e-12, "t = {t}, v = {v}");
    }
}

#[test]
fn constant_reward_ladder_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\ntype = \"finite\"\n\
         generator = [[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [1.0, 1.0, -2.0]]\n\
         reward = [0.8, 0.8, 0.8]\n\
         [cost]\nkind = \"rational\"\nc0 = 0.3\nimpulse_indices = [0, 1]\n\
         [dyadic]\nm_min = 0\nm_max = 5\n",
    );
    let out = dir.path().join("o");
    assert!(run(&["ladder"], &cfg, &out).status.success());
    let rows = csv_rows(&out.join("ladder.csv"));
    assert_eq!(rows.len(), 6);
    for (m, r) in rows.iter().enumerate() {
        assert_eq!(r[0], m.to_string());
        let lambda: f64 = r[2].parse().unwrap();
        assert!((lambda - 0.8).abs() < 1e-10, "{r:?}");
        assert_eq!(r[4], "no_impulse");
    }
}

#[test]
fn verify_passes_on_shipped_configs() {
    for name in ["cheap_shift", "single_state", "pdp", "reflected_diffusion"] {
        let out = tempfile::tempdir().unwrap();
        let o = run(&["verify"], &configs().join(format!("{name}.toml")), out.path());
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let report = fs::read_to_string(out.path().join("verify.txt")).unwrap();
        assert!(!report.contains(" fail "), "{name}: {report}");
    }
}

#[test]
fn formats_select_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CHEAP_SHIFT_SMALL}\n[output]\ndirectory = \"x\"\nformats = [\"csv\"]\n"));
    let out = dir.path().join("o");
    assert!(run(&["ladder"], &cfg, &out).status.success());
    assert!(out.join("ladder.csv").exists());
    assert!(!out.join("ladder.txt").exists());
}
