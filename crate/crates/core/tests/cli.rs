use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_robust-swipt"));
    c.env("ROBUST_SWIPT_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Value after `key: ` parsed as the leading float.
fn field(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {out}"));
    line[key.len() + 1..].trim().split_whitespace().next().unwrap().parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_power_minimization_without_sinr_is_zero() {
    let o = run(&["solve", "--alpha", "0", "--gamma-db", "-inf"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(field(&out, "objective:"), 0.0);
    assert_eq!(field(&out, "trace_w:"), 0.0);
}

#[test]
fn solve_alpha_one_uses_full_power() {
    let o = run(&["solve", "--alpha", "1"]);
    assert_eq!(code(&o), 0);
    let tr = field(&stdout(&o), "trace_w:");
    assert!((tr - 100.0).abs() <= 1e-4, "{tr}");
}

#[test]
fn missing_config_is_error() {
    let o = run(&["--config", "/definitely/not/here.toml", "solve"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.toml", "seed = 1\n[algorithm]\nalpha = 0.5\nwhat = 3\n");
    let o = run(&["--config", &p, "solve"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn infeasible_solve_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "[powers]\np_max_dbm = -20.0\n");
    let o = run(&["--config", &p, "solve", "--gamma-db", "30"]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[sweep]\nalphas = [0.5]\ngamma_db = [0.0, 5.0]\nrealizations = 3\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["--config", &cfg, "sweep", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = fs::read(a.join("rows.csv")).unwrap();
    assert_eq!(rows, fs::read(b.join("rows.csv")).unwrap());
    assert_eq!(fs::read(a.join("cells.csv")).unwrap(), fs::read(b.join("cells.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.txt")).unwrap(), fs::read(b.join("manifest.txt")).unwrap());
    let text = String::from_utf8(rows).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("alpha,gamma_db,realization,model,csi,status,iterations,trace_w,"));
}

#[test]
fn sweep_with_infeasible_cell_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "[powers]\np_max_dbm = 0.0\n[sweep]\nalphas = [0.0]\ngamma_db = [-inf, 60.0]\nrealizations = 2\n",
    );
    let out = dir.path().join("o");
    let o = run(&["--config", &cfg, "sweep", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    let cells = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3);
}

#[test]
fn sweep_unwritable_dir_is_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "plain", "x");
    let o = run(&["sweep", "--out", &format!("{file}/sub")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn comparison_sweep_writes_paired_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[sweep]\nalphas = [0.5]\ngamma_db = [0.0]\nrealizations = 1\n");
    let out = dir.path().join("o");
    let o = run(&["--config", &cfg, "sweep", "--kind", "comparison", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let paired = fs::read_to_string(out.join("paired.csv")).unwrap();
    assert_eq!(paired.lines().count(), 1 + 4);
    assert_eq!(fs::read_to_string(out.join("rows.csv")).unwrap().lines().count(), 1 + 4);
}

#[test]
fn validate_default_passes() {
    let o = run(&["validate", "--samples", "200"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn validate_without_samples_passes() {
    let o = run(&["validate", "--samples", "0"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn validate_corrupted_exit_four() {
    let o = run(&["validate", "--samples", "100", "--corrupt-scale", "1.5"]);
    assert_eq!(code(&o), 4, "{}", stdout(&o));
    assert!(stdout(&o).contains("VIOLATED"));
}

#[test]
fn convergence_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = run(&["convergence", "--out", out.to_str().unwrap(), "--seeds", "2", "--alphas", "0,0.5", "--gamma-db", "0"]);
    // --gamma-db is not a convergence flag
    assert_eq!(code(&o), 1);
    let cfg = write(dir.path(), "g.toml", "[powers]\ngamma_db = 0.0\n");
    let o = run(&["--config", &cfg, "convergence", "--out", out.to_str().unwrap(), "--seeds", "2", "--alphas", "0,0.5"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(text.starts_with("alpha,seed,m,sigma\n"));
    assert!(text.lines().count() >= 1 + 4);
}

#[test]
fn bad_thread_env_is_error() {
    let o = bin().env("ROBUST_SWIPT_THREADS", "many").args(["solve", "--alpha", "0"]).output().unwrap();
    assert_eq!(code(&o), 1);
}
