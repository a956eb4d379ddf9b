use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mtrack_core::world::generate::{TaskSpec, UNSEEN_SEED_BASE};

fn mtrack(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtrack"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MTRACK_SEED")
        .output()
        .unwrap()
}

fn seeds(path: &Path) -> Vec<u64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<TaskSpec>(l).unwrap().seed)
        .collect()
}

#[test]
fn gen_is_deterministic_and_splits_are_disjoint() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(mtrack(d.path(), &["--seed", "3", "gen", "--n", "14", "--name", "seen"]).status.success());
        assert!(mtrack(d.path(), &["--seed", "3", "gen", "--n", "14", "--unseen", "--name", "unseen"]).status.success());
    }
    assert_eq!(fs::read(a.path().join("seen.jsonl")).unwrap(), fs::read(b.path().join("seen.jsonl")).unwrap());
    let seen: HashSet<u64> = seeds(&a.path().join("seen.jsonl")).into_iter().collect();
    let unseen: HashSet<u64> = seeds(&a.path().join("unseen.jsonl")).into_iter().collect();
    assert!(seen.is_disjoint(&unseen));
    assert!(seen.iter().all(|&s| s < UNSEEN_SEED_BASE) && unseen.iter().all(|&s| s >= UNSEEN_SEED_BASE));
}

#[test]
fn gen_reports_type_counts_for_a_mix() {
    let d = tempfile::tempdir().unwrap();
    let o = mtrack(d.path(), &["gen", "--n", "30", "--mix", "Examine=1,Heat&Place=1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let counted: usize = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, 30);
    assert!(text.contains("Examine") && text.contains("Heat&Place") && !text.contains("Pick&Place"));
}

#[test]
fn seed_flag_beats_environment_beats_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 9}"#).unwrap();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mtrack"));
        c.arg("--out").arg(d.path()).arg("--config").arg(&cfg).env_remove("MTRACK_SEED");
        if let Some(e) = env {
            c.env("MTRACK_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c.args(["gen", "--n", "1"]).output().unwrap();
        assert!(o.status.success());
        let log = String::from_utf8(o.stderr).unwrap();
        let cfg: serde_json::Value = serde_json::from_str(log.strip_prefix("config: ").unwrap().trim()).unwrap();
        cfg["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, None), 9);
    assert_eq!(run(Some("5"), None), 5);
    assert_eq!(run(Some("5"), Some("2")), 2);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(mtrack(d.path(), &["run", "--data", "/definitely/not/here.jsonl"]).status.code(), Some(2));

    assert!(mtrack(d.path(), &["gen", "--n", "3"]).status.success());
    let data = d.path().join("tasks.jsonl");
    assert_eq!(mtrack(d.path(), &["run", "--data", data.to_str().unwrap()]).status.code(), Some(4));

    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("{\"format_version\": 1\n");
    fs::write(&data, text).unwrap();
    let o = mtrack(d.path(), &["run", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8(o.stderr).unwrap().contains("tasks.jsonl:4:"));

    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, "{\"task_seed\": 1}\n").unwrap();
    assert_eq!(mtrack(d.path(), &["report", "--results", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn report_regenerates_tables_from_results() {
    let d = tempfile::tempdir().unwrap();
    assert!(mtrack(d.path(), &["gen", "--n", "7", "--unseen", "--name", "eval"]).status.success());
    let data = d.path().join("eval.jsonl");
    let o = mtrack(d.path(), &["--jobs", "2", "ablate", "--data", data.to_str().unwrap(), "--modes", "off,oracle", "--agent", "greedy"]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let results = d.path().join("ablate/results.jsonl");
    fs::remove_dir_all(d.path().join("ablate/traces")).unwrap();
    let o = mtrack(d.path(), &["report", "--results", results.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
    assert_eq!(fs::read_to_string(d.path().join("ablate/report.txt")).unwrap(), table);
}

#[test]
fn ablate_skips_modes_without_models_but_run_refuses() {
    let d = tempfile::tempdir().unwrap();
    assert!(mtrack(d.path(), &["gen", "--n", "4", "--name", "eval"]).status.success());
    let data = d.path().join("eval.jsonl");
    let o = mtrack(d.path(), &["ablate", "--data", data.to_str().unwrap(), "--agent", "greedy"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("off") && text.contains("oracle"));
    assert!(text.to_lowercase().contains("warning"));
    let o = mtrack(d.path(), &["run", "--data", data.to_str().unwrap(), "--mode", "passive", "--agent", "greedy"]);
    assert_eq!(o.status.code(), Some(4));
}
