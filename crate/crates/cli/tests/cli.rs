use std::path::Path;
use std::process::{Command, Output};

fn coordnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordnet"))
        .args(args)
        .args(["--log", "warn"])
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path) {
    let out = coordnet(&["synth", "--out", "data", "--seed", "2", "--background-users", "800"], dir);
    assert_ok(&out);
    assert!(dir.join("data/config.toml").is_file());
    assert!(dir.join("data/planted.json").is_file());
}

const SMALL: [&str; 6] = ["--prune-fraction", "2e-4", "--n-draws", "1000", "--output-dir", "out"];

#[test]
fn run_all_then_downstream_tools() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");

    let mut args = vec!["run-all", "-c", "config.toml"];
    args.extend(SMALL);
    assert_ok(&coordnet(&args, &data));
    let out = data.join("out");
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("report/takedown.csv").is_file());

    let perm = coordnet(
        &["permtest", "--pool", "out/integrity/high_retweet_posts.csv", "--draws", "500", "--seed", "3"],
        &data,
    );
    assert_ok(&perm);
    let json: serde_json::Value = serde_json::from_slice(&perm.stdout).unwrap();
    assert_eq!(json["n_draws"], 500);
    assert!(json["p_value"].as_f64().is_some_and(|p| (0.0..=1.0).contains(&p)));

    let td = coordnet(
        &[
            "takedown",
            "--records",
            "out/integrity/amplification.csv",
            "--pool",
            "out/integrity/high_retweet_posts.csv",
            "--setup",
            "known",
            "--k-max",
            "5",
            "--out",
            "td.csv",
        ],
        &data,
    );
    assert_ok(&td);
    let csv = std::fs::read_to_string(data.join("td.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("known_misleading,")));

    let rep = coordnet(&["report", "--manifest", "out/manifest.json", "--output-dir", "again"], &data);
    assert_ok(&rep);
    let a = std::fs::read(out.join("report/components.csv")).unwrap();
    let b = std::fs::read(data.join("again/report/components.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stage_command_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");
    let mut args = vec!["components", "-c", "config.toml"];
    args.extend(SMALL);
    assert_ok(&coordnet(&args, &data));
    assert!(data.join("out/components/membership.csv").is_file());
    assert!(!data.join("out/characterize").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = coordnet(&["run-all", "--prune-fraction", "0", "--corpus", "x.jsonl"], dir.path());
    assert_eq!(bad.status.code(), Some(2));

    std::fs::write(dir.path().join("broken.toml"), "[similarity]\nnot_a_field = 1\n").unwrap();
    let bad = coordnet(&["run-all", "-c", "broken.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2));

    let missing = coordnet(&["run-all", "--corpus", "absent.jsonl"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(dir.path().join("out/manifest.json").is_file());

    let no_pool = coordnet(&["permtest", "--pool", "absent.csv"], dir.path());
    assert_eq!(no_pool.status.code(), Some(1));
}
