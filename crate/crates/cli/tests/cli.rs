use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ifdflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifdflow"))
        .args(args)
        .env_remove("IFDFLOW_JOBS")
        .output()
        .expect("spawn ifdflow")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
name = "small"

[domain]
extents = [1.0]
cells = [16]

[model]
A = [[2, 1], [1, 2]]
m = ["3 + sin(2*pi*x)", "3 + cos(2*pi*x)"]

[initial]
u0 = [0.5, 0.5]

[solver]
t_end = 0.05
snapshot_interval = 0.01
"#;

#[test]
fn check_reports_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", SMALL);
    let out = ifdflow(&["check", "--scenario", &sc]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("small"), "{text}");
}

#[test]
fn check_fails_when_structure_is_violated() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", &SMALL.replace("m = [\"3 + sin(2*pi*x)\", \"3 + cos(2*pi*x)\"]", "m = [3, -1]"));
    let out = ifdflow(&["check", "--scenario", &sc]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_scenario_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", &SMALL.replace("t_end = 0.05", "t_end = 0.05\nbogus = 1"));
    let out = ifdflow(&["run", "--scenario", &sc, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line"), "{err}");

    let missing = tmp.path().join("nope.toml");
    let out = ifdflow(&["check", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_reproducible_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = ifdflow(&["run", "--scenario", &sc, "--out", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["functionals.csv", "diagnostics.json", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let snaps: Vec<_> = fs::read_dir(a.join("snapshots")).unwrap().collect();
    assert!(snaps.len() >= 5);
    let manifest: String = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("functionals.csv") && manifest.contains("sha256"));
}

#[test]
fn sweep_writes_table_and_honours_jobs_env() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", SMALL);
    let one = tmp.path().join("one");
    let out = ifdflow(&["sweep", "--scenario", &sc, "--param", "delta", "--values", "1e-2,1e-3", "--out", one.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let two = tmp.path().join("two");
    let out = Command::new(env!("CARGO_BIN_EXE_ifdflow"))
        .args(["sweep", "--scenario", &sc, "--param", "delta", "--values", "1e-2,1e-3", "--out", two.to_str().unwrap()])
        .env("IFDFLOW_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let table = fs::read_to_string(one.join("sweep.csv")).unwrap();
    let lines: Vec<_> = table.lines().collect();
    assert!(lines[0].starts_with("value,status,E_end,gamma"));
    assert_eq!(lines.len(), 3);
    // all columns but wall time agree between job counts
    let strip = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(strip(&table), strip(&fs::read_to_string(two.join("sweep.csv")).unwrap()));
    for k in 0..2 {
        let run = format!("run_{k:03}/functionals.csv");
        assert_eq!(fs::read(one.join(&run)).unwrap(), fs::read(two.join(&run)).unwrap());
    }
}

#[test]
fn bad_sweep_parameter_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.toml", SMALL);
    let out = ifdflow(&["sweep", "--scenario", &sc, "--param", "gamma", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
