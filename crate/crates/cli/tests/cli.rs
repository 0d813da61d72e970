use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"
objective = { kind = "scalar_quadratic", a = 1.0 }

[integrator]
step = 1e-3
j_max = 1000
"#;

const UNITING: &str = r#"
[[runs]]
name = "uniting"
algorithm = "uniting"
variant = "nesterov_nsc"
local = { lambda = 200.0, gamma = 0.6666666666666666 }
global = { zeta = 2.0 }
eps0 = 10.0
eps10 = 5.0
c0 = 7000.0
c10 = 6819.68
x0 = { z1 = [50.0], q = 1 }
integrator = { t_max = 3.0 }
"#;

const NESTEROV: &str = r#"
[[runs]]
name = "nesterov"
algorithm = "nesterov_nsc"
zeta = 2.0
x0 = { z1 = [50.0] }
integrator = { t_max = 8.0 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uniting"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn uniting(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_one_trace_per_run_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE}{UNITING}{NESTEROV}"));
    let out = dir.path().join("out");
    let o = uniting("run", &config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["uniting.csv", "nesterov.csv", "runs.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let header = fs::read_to_string(out.join("uniting.csv")).unwrap();
    assert!(header.starts_with("t,j,q,tau,z1_0,z2_0,"), "{}", header.lines().next().unwrap());

    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("runs.json")).unwrap()).unwrap();
    let runs = runs.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["name"], "uniting");
    assert_eq!(runs[0]["jump_count"], 1);
    assert_eq!(runs[1]["jump_count"], 0);
}

#[test]
fn summary_settling_time_matches_the_trace() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE}{UNITING}"));
    let out = dir.path().join("out");
    assert!(uniting("run", &config, &out, &[]).status.success());

    // Recompute the last-crossing time from the CSV alone.
    let mut reader = csv::Reader::from_path(out.join("uniting.csv")).unwrap();
    let rows: Vec<(f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect();
    let threshold = 0.01 * rows[0].1.abs();
    let last_out = rows.iter().rposition(|&(_, z)| z.abs() > threshold).unwrap();
    let expected = rows[last_out + 1].0;

    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("runs.json")).unwrap()).unwrap();
    let reported = runs[0]["settling_time"].as_f64().unwrap();
    assert_eq!(reported, expected);
    assert!((reported - 0.811).abs() < 0.01, "{reported}");
}

#[test]
fn runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE}{UNITING}{NESTEROV}"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(uniting("run", &config, &a, &[]).status.success());
    assert!(uniting("run", &config, &b, &[]).status.success());
    for name in ["uniting.csv", "nesterov.csv", "runs.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn full_trace_records_every_step() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE}{NESTEROV}"));
    let (coarse, full) = (dir.path().join("coarse"), dir.path().join("full"));
    assert!(uniting("run", &config, &coarse, &[]).status.success());
    assert!(uniting("run", &config, &full, &["--full-trace"]).status.success());
    let lines = |d: &Path| fs::read_to_string(d.join("nesterov.csv")).unwrap().lines().count();
    assert!(lines(&full) > 5 * lines(&coarse), "{} vs {}", lines(&full), lines(&coarse));
}

#[test]
fn comparing_a_run_with_itself_shows_no_improvement() {
    let dir = TempDir::new().unwrap();
    let twin = NESTEROV.replace(r#"name = "nesterov""#, r#"name = "twin""#);
    let text = format!("{BASE}[compare]\nreference = \"nesterov\"\n{NESTEROV}{twin}");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = uniting("compare", &config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let twin_row = table.lines().find(|l| l.contains(",twin,")).unwrap();
    assert!(twin_row.ends_with(",0"), "{twin_row}");
    assert!(out.join("comparison.txt").is_file());
}

#[test]
fn compare_reports_uniting_improvement_over_nesterov() {
    let dir = TempDir::new().unwrap();
    let text = format!("{BASE}{UNITING}{NESTEROV}").replace("t_max = 3.0", "t_max = 8.0");
    let config = write_config(dir.path(), &text);
    let o = uniting("compare", &config, &dir.path().join("out"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.contains("nesterov")).unwrap().to_owned();
    let pct: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((pct - 81.6).abs() < 0.5, "{line}");
}

#[test]
fn compare_needs_two_runs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE}{UNITING}"));
    let o = uniting("compare", &config, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least two runs"), "{}", stderr(&o));
}

#[test]
fn negative_noise_level_is_rejected() {
    let dir = TempDir::new().unwrap();
    let text = format!("{BASE}[noise]\nseeds = [1]\nsigmas = [0.1, -1.0]\n{UNITING}");
    let config = write_config(dir.path(), &text);
    let o = uniting("noise", &config, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn noise_with_a_single_seed_writes_one_row_per_sigma() {
    let dir = TempDir::new().unwrap();
    let text = format!("{BASE}[noise]\nseeds = [1, 2, 3]\nsigmas = [0.0, 0.1]\n{UNITING}");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = uniting("noise", &config, &out, &["--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(out.join("noise.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[1] == "7"));
}

#[test]
fn validate_prints_derived_constants() {
    let dir = TempDir::new().unwrap();
    let sc = r#"
[[runs]]
name = "nesterov"
algorithm = "nesterov_sc"
zeta = 0.4
x0 = { z1 = [50.0] }
"#;
    let config = write_config(dir.path(), &format!("{BASE}{UNITING}{sc}"));
    let o = bin().arg("validate").arg("--config").arg(&config).output().unwrap();
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("d0 = 6933.333333"), "{text}");
    assert!(text.contains("strongly convex rate a = 0.5"), "{text}");
    assert!(text.contains("validation passed"), "{text}");
}

#[test]
fn uniting_with_nonzero_timer_warns() {
    let dir = TempDir::new().unwrap();
    let text = format!("{BASE}{UNITING}").replace("q = 1 }", "q = 1, tau = 0.5 }");
    let config = write_config(dir.path(), &text);
    let o = uniting("run", &config, &dir.path().join("out"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let o = bin().arg("validate").arg("--config").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}{}", path.display(), stdout(&o), stderr(&o));
        seen += 1;
    }
    assert_eq!(seen, 7);
}

#[test]
fn missing_config_is_an_error() {
    let o = bin().args(["run", "--config", "/nonexistent/experiment.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}
