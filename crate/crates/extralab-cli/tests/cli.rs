//! End-to-end tests of the `extralab` binary: exit codes, file outputs,
//! and the determinism contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use extralab::metrics::Trace;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_extralab"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_SC: &str = r#"{
    "problem": {"n": 6, "s": 3, "m": 8, "mu": 1e-2, "seed": 11},
    "graph": {"family": "erdos_renyi", "param": 0.6, "seed": 7},
    "algorithms": [
        {"name": "extra_sc"},
        {"name": "acc_extra", "overrides": {"t_schedule": {"fixed": 5}}}
    ],
    "budget": {"max_grad_rounds": 500, "max_comm_rounds": 1000, "target_gap": 1e-11}
}"#;

#[test]
fn run_writes_parseable_csvs_and_reports_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SC);
    let out_dir = dir.path().join("results");
    let out = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        stdout_of(&out),
        stderr_of(&out)
    );
    for name in ["extra_sc", "acc_extra"] {
        let csv_path = out_dir.join(format!("{name}.csv"));
        assert!(csv_path.exists(), "missing {csv_path:?}");
        let trace = Trace::from_csv(&std::fs::read_to_string(&csv_path).unwrap()).unwrap();
        assert!(!trace.records.is_empty());
        assert!(!trace.fingerprint.is_empty());
        let first = trace.records.first().unwrap();
        let last = trace.records.last().unwrap();
        assert!(last.objective_gap < first.objective_gap);
        assert!(stdout_of(&out).contains(name));
    }
    // no SVG without the flag
    assert!(!out_dir.join("gap.svg").exists());
}

#[test]
fn svg_flag_renders_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SC);
    let out_dir = dir.path().join("results");
    let out = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("--svg")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    for name in ["gap.svg", "consensus.svg", "rho.svg"] {
        let text = std::fs::read_to_string(out_dir.join(name)).unwrap();
        assert!(text.starts_with("<svg"), "{name} is not an svg");
        assert!(text.contains("<polyline"), "{name} has no data lines");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let checks = [
        // unknown algorithm name
        r#"{"problem":{},"graph":{"family":"ring"},"algorithms":[{"name":"adagrad"}]}"#,
        // unknown key
        r#"{"problem":{"nn":3},"graph":{"family":"ring"},"algorithms":[{"name":"extra_sc"}]}"#,
        // no algorithms
        r#"{"problem":{},"graph":{"family":"ring"},"algorithms":[]}"#,
        // malformed JSON
        r#"{"problem":{},"#,
        // bad graph family
        r#"{"problem":{},"graph":{"family":"torus"},"algorithms":[{"name":"extra_sc"}]}"#,
    ];
    for (i, text) in checks.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), text);
        let out = bin().args(["validate"]).arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", stderr_of(&out));
        assert!(
            stderr_of(&out).contains("config error"),
            "case {i} stderr: {}",
            stderr_of(&out)
        );
    }
    let out = bin()
        .args(["run"])
        .arg(dir.path().join("nonexistent.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_accepts_the_minimal_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "min.json",
        r#"{"problem":{},"graph":{"family":"ring"},"algorithms":[{"name":"extra_sc"}]}"#,
    );
    let out = bin().args(["validate"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("ok:"));
    assert!(text.contains("extra_sc"));
}

#[test]
fn divergence_exits_3_and_names_the_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "div.json",
        r#"{
            "problem": {"n": 5, "s": 2, "m": 6, "mu": 1e-2, "seed": 3},
            "graph": {"family": "ring"},
            "algorithms": [
                {"name": "extra_sc", "overrides": {"alpha": 1e9}},
                {"name": "extra_original"}
            ],
            "budget": {"max_grad_rounds": 2000, "max_comm_rounds": 4000, "target_gap": 1e-9}
        }"#,
    );
    let out_dir = dir.path().join("results");
    let out = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("extra_sc"));
    // the healthy variant still ran and wrote its trace
    assert!(out_dir.join("extra_original.csv").exists());
}

#[test]
fn graph_info_prints_the_ring_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ring.json",
        r#"{"problem":{"m":8},"graph":{"family":"ring"},"algorithms":[{"name":"extra_sc"}]}"#,
    );
    let out = bin().args(["graph-info"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("m 8"));
    assert!(text.contains("edges 8"));
    let sigma2: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("sigma2 "))
        .unwrap()
        .parse()
        .unwrap();
    let expected = 2.0 / 3.0 + (2.0 * std::f64::consts::PI / 8.0).cos() / 3.0;
    assert!((sigma2 - expected).abs() < 1e-9, "{sigma2} vs {expected}");
    assert!(text.contains("1/(1-sigma2)"));
}

#[test]
fn reruns_are_byte_identical_after_dropping_wall_time() {
    let strip_wall_time = |csv: &str| -> String {
        csv.lines()
            .map(|line| {
                if line.starts_with('#') || line.starts_with("iter,") {
                    line.to_owned()
                } else {
                    line.rsplit_once(',').map(|(head, _)| head.to_owned()).unwrap()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SC);
    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = bin()
            .args(["run"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .env("EXTRALAB_THREADS", "1")
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        runs.push(out_dir);
    }
    for name in ["extra_sc.csv", "acc_extra.csv"] {
        let a = std::fs::read_to_string(runs[0].join(name)).unwrap();
        let b = std::fs::read_to_string(runs[1].join(name)).unwrap();
        assert_ne!(strip_wall_time(&a), "");
        assert_eq!(strip_wall_time(&a), strip_wall_time(&b), "{name} differs");
    }
}

#[test]
fn seed_override_changes_the_fingerprint_and_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SC);
    let fingerprint_of = |out_dir: &Path| -> String {
        let text = std::fs::read_to_string(out_dir.join("extra_sc.csv")).unwrap();
        Trace::from_csv(&text).unwrap().fingerprint
    };
    let base_dir = dir.path().join("base");
    let out = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&base_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let override_dir = dir.path().join("override");
    let out = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&override_dir)
        .args(["--seed-override", "99"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(fingerprint_of(&base_dir), fingerprint_of(&override_dir));
}
