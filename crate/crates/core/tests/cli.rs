use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use worldloop::datagen::read_dataset;
use worldloop::metrics::ReportRow;
use worldloop::tasks::{EpisodeResult, Suite};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_worldloop")).args(args).current_dir(cwd).env_remove("RUST_BACKTRACE").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = bin(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn gen_suite_run_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-suite", "--task", "ar", "--scenes", "2", "--episodes", "2", "--out", "suite"], d);
    let suite = Suite::load(&d.join("suite/suite.jsonl")).unwrap();
    assert_eq!(suite.scenes.len(), 2);
    assert_eq!(suite.episodes.len(), 4);

    let run = ["run", "--suite", "suite/suite.jsonl", "--model", "none", "--model", "oracle", "--seeds", "2", "--out"];
    let table = ok(&[&run[..], &["r1"]].concat(), d);
    assert!(table.lines().next().unwrap().starts_with("task"));
    ok(&[&run[..], &["r2"]].concat(), d);
    for f in ["report.csv", "episodes.jsonl"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap(), "{f} differs");
    }
    // the resolved configs differ only in the output directory
    let fp = |r: &str| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(d.join(r).join("run_config.json")).unwrap()).unwrap()
            ["fingerprint"]
            .clone()
    };
    assert!(fp("r1").is_string());
    assert_eq!(fp("r1"), fp("r2"));

    let episodes = fs::read_to_string(d.join("r1/episodes.jsonl")).unwrap();
    let results: Vec<EpisodeResult> = episodes.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(results.len(), 4 * 2 * 2);
    let rows: Vec<ReportRow> =
        csv::Reader::from_path(d.join("r1/report.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.episodes == 4 && r.task == "ar"));

    let v = ok(&["validate", "--suite", "suite/suite.jsonl", "--episodes", "r1/episodes.jsonl"], d);
    assert!(v.contains("traces: 16 checked, 0 invalid"), "{v}");

    // a doctored path length is caught
    let mut bad = results.clone();
    bad[0].path_length_m += 1.0;
    let text: String = bad.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(d.join("bad.jsonl"), text).unwrap();
    let out = bin(&["validate", "--suite", "suite/suite.jsonl", "--episodes", "bad.jsonl"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 invalid"));
}

#[test]
fn empty_suite_runs_to_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.jsonl"), "").unwrap();
    ok(&["run", "--suite", "empty.jsonl", "--out", "r"], d);
    assert_eq!(fs::read_to_string(d.join("r/episodes.jsonl")).unwrap(), "");
    let rows: Vec<ReportRow> =
        csv::Reader::from_path(d.join("r/report.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    assert!(rows.is_empty());
}

#[test]
fn scenes_then_datagen() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-scenes", "--count", "2", "--size", "20", "--seed", "3", "--out", "scenes"], d);
    let out = ok(
        &["datagen", "--scene", "scenes/scene_000.txt", "--scene", "scenes/scene_001.txt", "--pano-width", "64", "--out", "data"],
        d,
    );
    assert!(out.is_empty());
    let records = read_dataset(&d.join("data")).unwrap();
    assert!(!records.is_empty());
    let scenes: std::collections::BTreeSet<&str> = records.iter().map(|r| r.scene.as_str()).collect();
    assert_eq!(scenes.len(), 2);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["run"][..],
        &["run", "--suite", "missing.jsonl", "--out", "r"],
        &["gen-suite", "--task", "walk", "--out", "s"],
        &["validate", "--suite", "missing.jsonl"],
    ] {
        let out = bin(args, d);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty());
    }
    fs::write(d.join("s.jsonl"), "").unwrap();
    let out = bin(&["run", "--suite", "s.jsonl", "--model", "bogus", "--out", "r"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}
