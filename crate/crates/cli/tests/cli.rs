use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/workflows/sim_analysis.json")
}

fn ceal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ceal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn tune_twice_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let s = s.to_str().unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        ok(ceal(
            dir.path(),
            &[
                "tune",
                "--spec",
                s,
                "--algo",
                "ceal",
                "--m",
                "50",
                "--iters",
                "3",
                "--seed",
                "7",
                "--pool-size",
                "400",
                "--out",
                out,
            ],
        ));
    }
    assert_eq!(
        digest(&dir.path().join("a.jsonl")),
        digest(&dir.path().join("b.jsonl"))
    );
}

#[test]
fn budget_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let out = ceal(
        dir.path(),
        &[
            "tune",
            "--spec",
            s.to_str().unwrap(),
            "--m",
            "50",
            "--m-r",
            "40",
            "--m-0",
            "20",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m_R + m_0"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ceal(dir.path(), &["tune", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ceal(
        dir.path(),
        &["tune", "--spec", "x.json", "--m", "5", "--algo", "magic"],
    );
    assert!(!out.status.success());
}

#[test]
fn history_files_make_component_phase_free() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let s = s.to_str().unwrap();
    ok(ceal(
        dir.path(),
        &["history", "--spec", s, "--rows", "200", "--out-dir", "hist"],
    ));
    let text = ok(ceal(
        dir.path(),
        &[
            "tune",
            "--spec",
            s,
            "--m",
            "40",
            "--pool-size",
            "400",
            "--history",
            "hist/sim_history.jsonl",
            "hist/analysis_history.jsonl",
        ],
    ));
    assert!(
        text.contains("component charge  0 (0 component runs)"),
        "{text}"
    );
    assert!(text.contains("total charged     40 of 40"), "{text}");
}

#[test]
fn resume_reproduces_the_full_trace() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let s = s.to_str().unwrap();
    let args = [
        "tune",
        "--spec",
        s,
        "--m",
        "30",
        "--seed",
        "3",
        "--pool-size",
        "300",
    ];
    let mut full = args.to_vec();
    full.extend(["--out", "full.jsonl"]);
    ok(ceal(dir.path(), &full));
    let text = std::fs::read_to_string(dir.path().join("full.jsonl")).unwrap();
    let cut: Vec<&str> = text.lines().take(3).collect();
    std::fs::write(dir.path().join("part.jsonl"), cut.join("\n") + "\n").unwrap();
    let mut resumed = args.to_vec();
    resumed.extend(["--out", "part.jsonl", "--resume"]);
    ok(ceal(dir.path(), &resumed));
    assert_eq!(
        digest(&dir.path().join("full.jsonl")),
        digest(&dir.path().join("part.jsonl"))
    );
}

#[test]
fn oracle_table_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let s = s.to_str().unwrap();
    for out in ["o1.csv", "o2.csv"] {
        ok(ceal(
            dir.path(),
            &["oracle", "--spec", s, "--pool-size", "2000", "--out", out],
        ));
    }
    let text = std::fs::read_to_string(dir.path().join("o1.csv")).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert_eq!(
        digest(&dir.path().join("o1.csv")),
        digest(&dir.path().join("o2.csv"))
    );
    // missing pool choice is a usage error
    assert!(!ceal(dir.path(), &["oracle", "--spec", s]).status.success());
}

#[test]
fn bench_shape_and_external_without_table() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let plan = format!(
        r#"{{"spec": {:?}, "algorithms": ["rs", "ceal"], "budgets": [{{"m": 30}}],
            "repetitions": 4, "pool_size": 300, "history_size": 0}}"#,
        s.to_str().unwrap()
    );
    std::fs::write(dir.path().join("plan.json"), plan).unwrap();
    ok(ceal(dir.path(), &["bench", "plan.json", "--out", "out"]));
    let mut rdr = csv::Reader::from_path(dir.path().join("out/bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.iter().filter(|r| &r[0] == "seed").count(), 8);
    assert_eq!(rows.len(), 8 + 4);
    // paired seeds: same pool per repetition across algorithms
    for rep in 0..4 {
        let fps: Vec<&str> = rows
            .iter()
            .filter(|r| &r[0] == "seed" && r[8] == *rep.to_string())
            .map(|r| r.get(10).unwrap())
            .collect();
        assert_eq!(fps.len(), 2);
        assert_eq!(fps[0], fps[1]);
    }

    let ext = format!(
        r#"{{"spec": {:?}, "algorithms": ["rs"], "budgets": [{{"m": 30}}], "executor": "external"}}"#,
        s.to_str().unwrap()
    );
    std::fs::write(dir.path().join("ext.json"), ext).unwrap();
    let out = ceal(dir.path(), &["bench", "ext.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pool table"));
}

#[test]
fn sweep_iterations_gives_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    ok(ceal(
        dir.path(),
        &[
            "sweep",
            "--spec",
            s.to_str().unwrap(),
            "--param",
            "iters",
            "--m",
            "40",
            "--repetitions",
            "1",
            "--pool-size",
            "200",
            "--out",
            "sw.csv",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("sw.csv")).unwrap();
    assert_eq!(text.lines().count(), 11);
}
