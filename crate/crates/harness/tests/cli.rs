//! The `beacon` binary: exit codes, messages and the run/report round trip.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use beacon_core::problems::BUILTIN_PROBLEMS;

fn beacon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beacon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
iterations = 6
n_init = 3
replicates = 2
output = "out"

[problem]
name = "rosenbrock"
dim = 2

[space]
bins = [8]

[[algorithms]]
name = "rs"

[[algorithms]]
name = "sobol"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_reports_bad_keys_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_config(tmp.path(), CONFIG);
    let o = beacon(&["validate", &ok]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: rosenbrock"));

    let bad = write_config(tmp.path(), &CONFIG.replace("n_init = 3", "n_inits = 3"));
    let o = beacon(&["validate", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_inits"), "{}", stderr(&o));

    let semantic = write_config(tmp.path(), &CONFIG.replace("bins = [8]", "bins = [8, 8]"));
    let o = beacon(&["validate", &semantic]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("space.bins"), "{}", stderr(&o));

    let o = beacon(&["validate", &tmp.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(beacon(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(beacon(&["run"]).status.code(), Some(1));
    assert_eq!(beacon(&["run", "x.toml", "--jobs", "many"]).status.code(), Some(1));
    assert!(beacon(&["--help"]).status.success());
}

#[test]
fn list_problems_names_every_builtin() {
    let o = beacon(&["list-problems"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for (name, _) in BUILTIN_PROBLEMS {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}");
    }
}

#[test]
fn run_then_report_writes_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("traces");
    let out_s = out.to_string_lossy().into_owned();

    let o = beacon(&["run", &cfg, "--output", &out_s, "--replicates", "3", "--seed", "7", "--jobs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 replicates run, 0 already present, 0 failed"), "{}", stdout(&o));
    assert!(out.join("sobol-002.jsonl").exists());
    assert!(!tmp.path().join("out").exists());
    let header = fs::read_to_string(out.join("rs-000.jsonl")).unwrap();
    assert!(header.lines().next().unwrap().contains("\"seed\":7"));

    let o = beacon(&["run", &cfg, "--output", &out_s, "--replicates", "3", "--seed", "7"]);
    assert!(stdout(&o).contains("0 replicates run, 6 already present"), "{}", stdout(&o));

    // a different seed into the same directory is a runtime error
    let o = beacon(&["run", &cfg, "--output", &out_s, "--seed", "8"]);
    assert_eq!(o.status.code(), Some(2));

    let report = tmp.path().join("report");
    let o = beacon(&["report", &out_s, "--output", &report.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("R=3"));
    let csv = fs::read_to_string(report.join("reachability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 9);
    let svg = fs::read_to_string(report.join("reachability.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.trim_end().ends_with("</svg>"));

    let o = beacon(&["report", &tmp.path().join("empty").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = beacon(&["validate", &path.to_string_lossy()]);
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
